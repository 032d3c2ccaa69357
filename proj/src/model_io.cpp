#include "sedforest/model_io.hpp"

#include <fstream>
#include <sstream>

#include "sedforest/error.hpp"

namespace sedforest {

using nlohmann::ordered_json;

namespace {

ordered_json gaussian_json(const std::optional<Gaussian>& g) {
  if (!g) return nullptr;
  return ordered_json{{"mean", g->mean}, {"variance", g->variance}};
}

std::optional<Gaussian> gaussian_from(const ordered_json& j) {
  if (j.is_null()) return std::nullopt;
  return Gaussian{j.at("mean").get<double>(), j.at("variance").get<double>()};
}

ordered_json node_json(const TreeNode& node) {
  if (node.is_leaf) {
    return ordered_json{{"type", "leaf"},
                        {"p_pos", node.leaf.p_pos},
                        {"p_neg", node.leaf.p_neg},
                        {"n_train", node.leaf.n_train},
                        {"onset", gaussian_json(node.leaf.onset)},
                        {"offset", gaussian_json(node.leaf.offset)}};
  }
  return ordered_json{
      {"type", "split"},
      {"r", node.test.r},
      {"q", node.test.q},
      {"tau", node.test.tau},
      {"objective", node.objective == Objective::classification ? "classification" : "regression"}};
}

class NodeReader {
 public:
  NodeReader(const ordered_json& nodes, std::size_t dim) : nodes_(nodes), dim_(dim) {}

  Tree read() {
    if (!nodes_.is_array() || nodes_.empty()) throw Error("model: tree has no nodes");
    read_node(1);
    if (pos_ != nodes_.size()) throw Error("model: trailing nodes after the tree");
    return Tree(std::move(out_));
  }

 private:
  int read_node(int depth) {
    if (pos_ >= nodes_.size()) throw Error("model: truncated node list");
    const ordered_json& j = nodes_[pos_++];
    const std::string type = j.at("type").get<std::string>();
    const int id = static_cast<int>(out_.size());
    out_.emplace_back();
    out_.back().depth = depth;
    if (type == "leaf") {
      LeafModel& leaf = out_.back().leaf;
      leaf.p_pos = j.at("p_pos").get<double>();
      leaf.p_neg = j.at("p_neg").get<double>();
      leaf.n_train = j.at("n_train").get<std::size_t>();
      leaf.onset = gaussian_from(j.at("onset"));
      leaf.offset = gaussian_from(j.at("offset"));
      return id;
    }
    if (type != "split") throw Error("model: unknown node type '" + type + "'");
    TreeNode split;
    split.is_leaf = false;
    split.depth = depth;
    split.test = {j.at("r").get<int>(), j.at("q").get<int>(), j.at("tau").get<double>()};
    if (split.test.r < 0 || split.test.q < 0 || static_cast<std::size_t>(split.test.r) >= dim_ ||
        static_cast<std::size_t>(split.test.q) >= dim_)
      throw Error("model: split channel out of range");
    const std::string objective = j.at("objective").get<std::string>();
    if (objective != "classification" && objective != "regression")
      throw Error("model: unknown objective '" + objective + "'");
    split.objective = objective == "classification" ? Objective::classification : Objective::regression;
    out_[static_cast<std::size_t>(id)] = split;
    const int left = read_node(depth + 1);
    const int right = read_node(depth + 1);
    out_[static_cast<std::size_t>(id)].left = left;
    out_[static_cast<std::size_t>(id)].right = right;
    return id;
  }

  const ordered_json& nodes_;
  std::size_t dim_;
  std::size_t pos_ = 0;
  std::vector<TreeNode> out_;
};

}  // namespace

ordered_json to_json(const ForestConfig& cfg) {
  return ordered_json{{"n_trees", cfg.n_trees},
                      {"subsample_ratio", cfg.subsample_ratio},
                      {"n_candidate_tests", cfg.n_candidate_tests},
                      {"max_depth", cfg.max_depth},
                      {"min_segments", cfg.min_segments},
                      {"steer_depth", cfg.steer_depth},
                      {"variance_floor", cfg.variance_floor},
                      {"seed", cfg.seed}};
}

ForestConfig forest_config_from_json(const ordered_json& j, ForestConfig base) {
  base.n_trees = j.value("n_trees", base.n_trees);
  base.subsample_ratio = j.value("subsample_ratio", base.subsample_ratio);
  base.n_candidate_tests = j.value("n_candidate_tests", base.n_candidate_tests);
  base.max_depth = j.value("max_depth", base.max_depth);
  base.min_segments = j.value("min_segments", base.min_segments);
  base.steer_depth = j.value("steer_depth", base.steer_depth);
  base.variance_floor = j.value("variance_floor", base.variance_floor);
  base.seed = j.value("seed", base.seed);
  return base;
}

ordered_json to_json(const FeatureConfig& cfg) {
  return ordered_json{{"n_channels", cfg.n_channels},   {"f_min", cfg.f_min},
                      {"f_max", cfg.f_max},             {"window_len", cfg.window_len},
                      {"hop_len", cfg.hop_len},         {"noise_subtraction", cfg.noise_subtraction},
                      {"sample_rate", cfg.sample_rate}};
}

FeatureConfig feature_config_from_json(const ordered_json& j, FeatureConfig base) {
  base.n_channels = j.value("n_channels", base.n_channels);
  base.f_min = j.value("f_min", base.f_min);
  base.f_max = j.value("f_max", base.f_max);
  base.window_len = j.value("window_len", base.window_len);
  base.hop_len = j.value("hop_len", base.hop_len);
  base.noise_subtraction = j.value("noise_subtraction", base.noise_subtraction);
  base.sample_rate = j.value("sample_rate", base.sample_rate);
  return base;
}

std::string serialize_forest(const Forest& forest) {
  ordered_json doc;
  doc["format_version"] = kModelFormatVersion;
  doc["class_label"] = forest.class_label;
  doc["feature_fingerprint"] = forest.feature_fingerprint;
  doc["feature_config"] = to_json(forest.feature_config);
  doc["dim"] = forest.dim;
  doc["config"] = to_json(forest.config);
  doc["z_plus"] = forest.z_plus;
  doc["z_minus"] = forest.z_minus;
  doc["max_train_event_duration"] = forest.max_train_event_duration;
  ordered_json trees = ordered_json::array();
  for (const Tree& tree : forest.trees) {
    ordered_json nodes = ordered_json::array();
    for (const TreeNode& node : tree.nodes()) nodes.push_back(node_json(node));
    trees.push_back(ordered_json{{"nodes", std::move(nodes)}});
  }
  doc["trees"] = std::move(trees);
  return doc.dump(1) + "\n";
}

Forest deserialize_forest(const std::string& text) {
  try {
    const ordered_json doc = ordered_json::parse(text);
    const int version = doc.at("format_version").get<int>();
    if (version != kModelFormatVersion)
      throw Error("model: unsupported format_version " + std::to_string(version));
    Forest forest;
    forest.class_label = doc.at("class_label").get<std::string>();
    forest.feature_fingerprint = doc.at("feature_fingerprint").get<std::string>();
    forest.feature_config = feature_config_from_json(doc.at("feature_config"));
    if (forest.feature_config.fingerprint() != forest.feature_fingerprint)
      throw Error("model: feature_config does not match feature_fingerprint");
    forest.dim = doc.at("dim").get<std::size_t>();
    forest.config = forest_config_from_json(doc.at("config"));
    forest.z_plus = doc.at("z_plus").get<double>();
    forest.z_minus = doc.at("z_minus").get<double>();
    if (!(forest.z_plus > 0.0 && forest.z_minus > 0.0))
      throw Error("model: normalization constants must be positive");
    forest.max_train_event_duration = doc.at("max_train_event_duration").get<double>();
    for (const auto& t : doc.at("trees")) forest.trees.push_back(NodeReader(t.at("nodes"), forest.dim).read());
    if (forest.trees.empty()) throw Error("model: no trees");
    return forest;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("model: malformed document: ") + e.what());
  }
}

void save_forest(const std::filesystem::path& path, const Forest& forest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write model file: " + path.string());
  out << serialize_forest(forest);
  if (!out) throw Error("write failed: " + path.string());
}

Forest load_forest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read model file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return deserialize_forest(ss.str());
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace sedforest
