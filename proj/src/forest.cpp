#include "sedforest/forest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "sedforest/error.hpp"

namespace sedforest {

namespace {

// Column-major copy of the segments reaching one node.
class NodeBlock {
 public:
  NodeBlock(std::span<const Segment> all, std::span<const std::size_t> members)
      : n_(members.size()), dim_(all[members.front()].x.size()), cols_(n_ * dim_), positive_(n_) {
    for (std::size_t i = 0; i < n_; ++i) {
      const Segment& s = all[members[i]];
      for (std::size_t c = 0; c < dim_; ++c) cols_[c * n_ + i] = s.x[c];
      positive_[i] = s.positive ? 1 : 0;
      if (s.positive) {
        pos_members_.push_back(i);
        d_onset_.push_back(s.d->onset);
        d_offset_.push_back(s.d->offset);
      }
    }
  }

  std::size_t size() const { return n_; }
  std::size_t dim() const { return dim_; }
  std::size_t n_pos() const { return pos_members_.size(); }
  const double* column(int c) const { return cols_.data() + static_cast<std::size_t>(c) * n_; }
  const std::vector<unsigned char>& positive() const { return positive_; }
  const std::vector<std::size_t>& pos_members() const { return pos_members_; }
  const std::vector<double>& d_onset() const { return d_onset_; }
  const std::vector<double>& d_offset() const { return d_offset_; }

 private:
  std::size_t n_;
  std::size_t dim_;
  std::vector<double> cols_;
  std::vector<unsigned char> positive_;
  std::vector<std::size_t> pos_members_;
  std::vector<double> d_onset_;
  std::vector<double> d_offset_;
};

// Draws (r, q) and a threshold inside the observed range of x[r] - x[q];
// leaves the differences in `diff`.
SplitTest next_candidate(const NodeBlock& block, Rng& rng, std::vector<double>& diff) {
  std::uniform_int_distribution<int> channel(0, static_cast<int>(block.dim()) - 1);
  const int r = channel(rng);
  const int q = channel(rng);
  const double* xr = block.column(r);
  const double* xq = block.column(q);
  const std::size_t n = block.size();
  double lo = xr[0] - xq[0];
  double hi = lo;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = xr[i] - xq[i];
    diff[i] = v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double tau = lo < hi ? std::uniform_real_distribution<double>(lo, hi)(rng) : lo;
  return {r, q, tau};
}

double gain_from_counts(std::size_t pos, std::size_t neg, std::size_t right_pos, std::size_t right_neg) {
  const std::size_t n = pos + neg;
  const std::size_t n_right = right_pos + right_neg;
  const std::size_t n_left = n - n_right;
  const double h_right = n_right == 0 ? 0.0 : entropy(right_pos, right_neg);
  const double h_left = n_left == 0 ? 0.0 : entropy(pos - right_pos, neg - right_neg);
  return entropy(pos, neg) - (static_cast<double>(n_right) / n * h_right +
                              static_cast<double>(n_left) / n * h_left);
}

// Squared deviation of one side's distance vectors from their mean.
double side_variation(const std::vector<double>& on, const std::vector<double>& off) {
  if (on.empty()) return 0.0;
  double sum_on = 0.0;
  double sum_off = 0.0;
  for (std::size_t i = 0; i < on.size(); ++i) {
    sum_on += on[i];
    sum_off += off[i];
  }
  const double mean_on = sum_on / static_cast<double>(on.size());
  const double mean_off = sum_off / static_cast<double>(on.size());
  double v = 0.0;
  for (std::size_t i = 0; i < on.size(); ++i) {
    const double a = on[i] - mean_on;
    const double b = off[i] - mean_off;
    v += a * a + b * b;
  }
  return v;
}

std::optional<SplitChoice> select_in_block(const NodeBlock& block, int n_candidates,
                                           Objective objective, Rng& rng) {
  const std::size_t n = block.size();
  if (n < 2) return std::nullopt;
  if (objective == Objective::regression && block.n_pos() < 2) return std::nullopt;

  const auto& positive = block.positive();
  const auto& pos_members = block.pos_members();
  const std::size_t n_pos = block.n_pos();
  const std::size_t n_neg = n - n_pos;
  std::vector<double> diff(n);
  std::vector<double> r_on, r_off, l_on, l_off;

  bool found = false;
  SplitTest best_test;
  double best_score = 0.0;
  for (int c = 0; c < n_candidates; ++c) {
    const SplitTest t = next_candidate(block, rng, diff);
    if (objective == Objective::classification) {
      std::size_t n_right = 0;
      std::size_t right_pos = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t go_right = diff[i] > t.tau ? 1 : 0;
        n_right += go_right;
        right_pos += go_right & positive[i];
      }
      if (n_right == 0 || n_right == n) continue;
      const double gain = gain_from_counts(n_pos, n_neg, right_pos, n_right - right_pos);
      if (!found || gain > best_score) {
        found = true;
        best_score = gain;
        best_test = t;
      }
    } else {
      r_on.clear(), r_off.clear(), l_on.clear(), l_off.clear();
      for (std::size_t k = 0; k < pos_members.size(); ++k) {
        if (diff[pos_members[k]] > t.tau) {
          r_on.push_back(block.d_onset()[k]);
          r_off.push_back(block.d_offset()[k]);
        } else {
          l_on.push_back(block.d_onset()[k]);
          l_off.push_back(block.d_offset()[k]);
        }
      }
      if (r_on.empty() || l_on.empty()) continue;
      const double v = side_variation(r_on, r_off) + side_variation(l_on, l_off);
      if (!found || v < best_score) {
        found = true;
        best_score = v;
        best_test = t;
      }
    }
  }
  if (!found) return std::nullopt;

  SplitChoice choice;
  choice.test = best_test;
  choice.score = best_score;
  const double* xr = block.column(best_test.r);
  const double* xq = block.column(best_test.q);
  for (std::size_t i = 0; i < n; ++i)
    (xr[i] - xq[i] > best_test.tau ? choice.right : choice.left).push_back(i);
  return choice;
}

LeafModel leaf_from(std::span<const Segment> all, std::span<const std::size_t> members,
                    double variance_floor) {
  LeafModel leaf;
  leaf.n_train = members.size();
  std::vector<const Segment*> pos;
  for (std::size_t i : members)
    if (all[i].positive) pos.push_back(&all[i]);
  leaf.p_pos = static_cast<double>(pos.size()) / static_cast<double>(members.size());
  leaf.p_neg = 1.0 - leaf.p_pos;
  if (pos.empty()) return leaf;

  auto fit = [&](auto field) {
    double sum = 0.0;
    for (const Segment* s : pos) sum += field(*s);
    const double mean = sum / static_cast<double>(pos.size());
    double var = 0.0;
    for (const Segment* s : pos) {
      const double e = field(*s) - mean;
      var += e * e;
    }
    var /= static_cast<double>(pos.size());
    return Gaussian{mean, std::max(var, variance_floor)};
  };
  leaf.onset = fit([](const Segment& s) { return s.d->onset; });
  leaf.offset = fit([](const Segment& s) { return s.d->offset; });
  return leaf;
}

class TreeGrower {
 public:
  TreeGrower(std::span<const Segment> all, const ForestConfig& cfg, Rng& rng)
      : all_(all), cfg_(cfg), rng_(rng) {}

  Tree grow(std::vector<std::size_t> members) {
    grow_node(std::move(members), 1);
    return Tree(std::move(nodes_));
  }

 private:
  int make_leaf_node(const std::vector<std::size_t>& members, int depth) {
    TreeNode node;
    node.is_leaf = true;
    node.depth = depth;
    node.leaf = leaf_from(all_, members, cfg_.variance_floor);
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int grow_node(std::vector<std::size_t> members, int depth) {
    if (depth >= cfg_.max_depth || members.size() <= static_cast<std::size_t>(cfg_.min_segments))
      return make_leaf_node(members, depth);
    const Objective objective =
        depth <= cfg_.steer_depth ? Objective::classification : Objective::regression;

    std::vector<std::size_t> right;
    std::vector<std::size_t> left;
    SplitTest test;
    {
      const NodeBlock block(all_, members);
      auto choice = select_in_block(block, cfg_.n_candidate_tests, objective, rng_);
      if (!choice) return make_leaf_node(members, depth);
      if (objective == Objective::classification && choice->score < -1e-12)
        throw std::logic_error("negative information gain during training");
      test = choice->test;
      for (std::size_t i : choice->right) right.push_back(members[i]);
      for (std::size_t i : choice->left) left.push_back(members[i]);
    }
    members.clear();
    members.shrink_to_fit();

    const int id = static_cast<int>(nodes_.size());
    TreeNode node;
    node.is_leaf = false;
    node.test = test;
    node.objective = objective;
    node.depth = depth;
    nodes_.push_back(node);
    const int l = grow_node(std::move(left), depth + 1);
    const int r = grow_node(std::move(right), depth + 1);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  std::span<const Segment> all_;
  const ForestConfig& cfg_;
  Rng& rng_;
  std::vector<TreeNode> nodes_;
};

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

void check_set(std::span<const Segment> set) {
  if (set.empty()) throw Error("empty segment set");
  const std::size_t dim = set.front().x.size();
  if (dim == 0) throw Error("segments have no features");
  for (const auto& s : set) {
    if (s.x.size() != dim) throw Error("segments have inconsistent dimensionality");
    if (s.positive != s.d.has_value()) throw Error("positive segments must carry a distance vector");
  }
}

}  // namespace

void ForestConfig::validate() const {
  if (n_trees < 1) throw Error("forest config: n_trees must be >= 1");
  if (!(subsample_ratio > 0.0 && subsample_ratio <= 1.0))
    throw Error("forest config: subsample_ratio must lie in (0, 1]");
  if (n_candidate_tests < 1) throw Error("forest config: n_candidate_tests must be >= 1");
  if (max_depth < 1) throw Error("forest config: max_depth must be >= 1");
  if (steer_depth < 1 || steer_depth > max_depth)
    throw Error("forest config: need 1 <= steer_depth <= max_depth");
  if (min_segments < 1) throw Error("forest config: min_segments must be >= 1");
  if (!(variance_floor > 0.0)) throw Error("forest config: variance_floor must be positive");
}

int split_test(std::span<const double> x, int r, int q, double tau) { return x[r] - x[q] > tau ? 1 : 0; }

double Gaussian::density(double x) const {
  const double e = x - mean;
  return std::exp(-e * e / (2.0 * variance)) / std::sqrt(2.0 * std::numbers::pi * variance);
}

double Gaussian::stddev() const { return std::sqrt(variance); }

Tree::Tree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

int Tree::leaf_index(std::span<const double> x) const {
  if (nodes_.empty()) throw Error("tree has no nodes");
  int id = 0;
  while (!nodes_[static_cast<std::size_t>(id)].is_leaf) {
    const TreeNode& node = nodes_[static_cast<std::size_t>(id)];
    if (static_cast<std::size_t>(std::max(node.test.r, node.test.q)) >= x.size())
      throw Error("feature vector dimensionality does not match the tree");
    id = node.test(x) ? node.right : node.left;
  }
  return id;
}

const LeafModel& Tree::descend(std::span<const double> x) const {
  return nodes_[static_cast<std::size_t>(leaf_index(x))].leaf;
}

int Tree::max_depth() const {
  int d = 0;
  for (const auto& n : nodes_) d = std::max(d, n.depth);
  return d;
}

std::size_t Tree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf; }));
}

double entropy(std::size_t n_pos, std::size_t n_neg) {
  const std::size_t n = n_pos + n_neg;
  if (n == 0) throw Error("entropy of an empty set");
  double h = 0.0;
  for (const std::size_t count : {n_neg, n_pos}) {
    if (count == 0) continue;
    const double p = static_cast<double>(count) / static_cast<double>(n);
    h -= p * std::log2(p);
  }
  return h;
}

double entropy(std::span<const Segment> set) {
  const auto pos = static_cast<std::size_t>(
      std::count_if(set.begin(), set.end(), [](const Segment& s) { return s.positive; }));
  return entropy(pos, set.size() - pos);
}

double info_gain(const SplitTest& test, std::span<const Segment> set) {
  if (set.empty()) throw Error("info_gain of an empty set");
  std::size_t pos = 0;
  std::size_t right_pos = 0;
  std::size_t right_neg = 0;
  for (const auto& s : set) {
    pos += s.positive ? 1 : 0;
    if (test(s.x)) (s.positive ? right_pos : right_neg) += 1;
  }
  return gain_from_counts(pos, set.size() - pos, right_pos, right_neg);
}

double distance_variation(const SplitTest& test, std::span<const Segment> set) {
  std::vector<double> r_on, r_off, l_on, l_off;
  for (const auto& s : set) {
    if (!s.positive) continue;
    if (test(s.x)) {
      r_on.push_back(s.d->onset);
      r_off.push_back(s.d->offset);
    } else {
      l_on.push_back(s.d->onset);
      l_off.push_back(s.d->offset);
    }
  }
  return side_variation(r_on, r_off) + side_variation(l_on, l_off);
}

std::vector<SplitTest> draw_candidates(std::span<const Segment> set, int n_candidates, Rng& rng) {
  check_set(set);
  const auto members = iota_indices(set.size());
  const NodeBlock block(set, members);
  std::vector<double> diff(set.size());
  std::vector<SplitTest> out;
  out.reserve(static_cast<std::size_t>(std::max(n_candidates, 0)));
  for (int c = 0; c < n_candidates; ++c) out.push_back(next_candidate(block, rng, diff));
  return out;
}

std::optional<SplitChoice> select_best_test(std::span<const Segment> set, int n_candidates,
                                            Objective objective, Rng& rng) {
  check_set(set);
  const auto members = iota_indices(set.size());
  const NodeBlock block(set, members);
  return select_in_block(block, n_candidates, objective, rng);
}

LeafModel make_leaf(std::span<const Segment> set, double variance_floor) {
  if (set.empty()) throw Error("make_leaf of an empty set");
  return leaf_from(set, iota_indices(set.size()), variance_floor);
}

Tree train_tree(std::span<const Segment> subset, const ForestConfig& cfg, Rng& rng) {
  cfg.validate();
  check_set(subset);
  return TreeGrower(subset, cfg, rng).grow(iota_indices(subset.size()));
}

std::uint64_t tree_seed(std::uint64_t forest_seed, int tree) {
  return derive_seed(forest_seed, {static_cast<std::uint64_t>(tree), 0});
}

Forest train_forest(std::span<const Segment> set, const ForestConfig& cfg,
                    const TrainingContext& ctx, int threads) {
  cfg.validate();
  check_set(set);
  const auto n_pos = static_cast<std::size_t>(
      std::count_if(set.begin(), set.end(), [](const Segment& s) { return s.positive; }));
  if (n_pos == 0) throw Error("cannot train class '" + ctx.class_label + "': no positive segments");
  if (n_pos == set.size())
    throw Error("cannot train class '" + ctx.class_label + "': no negative segments");

  Forest forest;
  forest.class_label = ctx.class_label;
  forest.feature_config = ctx.feature_config;
  forest.feature_fingerprint = ctx.feature_config.fingerprint();
  forest.config = cfg;
  forest.dim = set.front().x.size();
  double max_len = 0.0;
  for (const auto& s : set)
    if (s.positive) max_len = std::max(max_len, s.d->onset + s.d->offset + 1.0);
  forest.max_train_event_duration = max_len * ctx.hop_len;

  const std::size_t n_sub = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(cfg.subsample_ratio * static_cast<double>(set.size()))));
  forest.trees.resize(static_cast<std::size_t>(cfg.n_trees));

  auto build = [&](int t) {
    std::vector<std::size_t> members = iota_indices(set.size());
    if (n_sub < set.size()) {
      Rng sub_rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(t), 1}));
      for (std::size_t i = 0; i < n_sub; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, members.size() - 1);
        std::swap(members[i], members[pick(sub_rng)]);
      }
      members.resize(n_sub);
      std::sort(members.begin(), members.end());
    }
    Rng rng(tree_seed(cfg.seed, t));
    forest.trees[static_cast<std::size_t>(t)] = TreeGrower(set, cfg, rng).grow(std::move(members));
  };

  const int workers = std::clamp(threads, 1, cfg.n_trees);
  if (workers == 1) {
    for (int t = 0; t < cfg.n_trees; ++t) build(t);
  } else {
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (int t = next++; t < cfg.n_trees; t = next++) build(t);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  calibrate(forest, set);
  return forest;
}

CalibrationReport calibrate(Forest& forest, std::span<const Segment> set) {
  CalibrationReport report;
  for (Tree& tree : forest.trees) {
    auto& nodes = tree.mutable_nodes();
    std::vector<std::vector<std::size_t>> arrivals(nodes.size());
    for (std::size_t i = 0; i < set.size(); ++i)
      arrivals[static_cast<std::size_t>(tree.leaf_index(set[i].x))].push_back(i);
    std::vector<std::size_t> counts(nodes.size(), 0);
    for (std::size_t id = 0; id < nodes.size(); ++id) {
      if (!nodes[id].is_leaf) continue;
      counts[id] = arrivals[id].size();
      if (arrivals[id].empty())
        nodes[id].leaf.n_train = 0;
      else
        nodes[id].leaf = leaf_from(set, arrivals[id], forest.config.variance_floor);
    }
    report.arrivals.push_back(std::move(counts));
  }
  return report;
}

}  // namespace sedforest
