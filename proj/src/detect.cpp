#include "sedforest/detect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "sedforest/error.hpp"

namespace sedforest {

namespace {

// Truncated vote curve of one leaf, relative to the voting segment's index.
struct Kernel {
  long first = 0;
  std::vector<double> values;
};

Kernel make_kernel(const Gaussian& g, double shift, double weight) {
  // vote mean sits at m + shift
  const double reach = kVoteTruncationSigmas * g.stddev();
  Kernel k;
  k.first = static_cast<long>(std::ceil(shift - reach));
  const auto last = static_cast<long>(std::floor(shift + reach));
  const Gaussian centred{shift, g.variance};
  for (long j = k.first; j <= last; ++j) k.values.push_back(weight * centred.density(static_cast<double>(j)));
  return k;
}

void add_kernel(std::vector<double>& track, const Kernel& k, long m) {
  const long n_max = static_cast<long>(track.size());
  for (std::size_t i = 0; i < k.values.size(); ++i) {
    const long n = m + k.first + static_cast<long>(i);
    if (n >= 0 && n < n_max) track[static_cast<std::size_t>(n)] += k.values[i];
  }
}

}  // namespace

void DetectConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("detect config: alpha must lie in [0, 1]");
  if (!(beta >= 0.0)) throw Error("detect config: beta must be nonnegative");
  if (smooth_window < 1 || smooth_window % 2 == 0)
    throw Error("detect config: smooth_window must be odd and >= 1");
  if (!(duration_factor > 0.0)) throw Error("detect config: duration_factor must be positive");
}

const LeafModel& descend(const Forest& forest, std::size_t tree, std::span<const double> x) {
  if (x.size() != forest.dim)
    throw Error("feature dimensionality " + std::to_string(x.size()) + " does not match model (" +
                std::to_string(forest.dim) + ")");
  return forest.trees.at(tree).descend(x);
}

Vote vote_tree(const LeafModel& leaf, long m, double alpha, long n) {
  if (leaf.p_pos < alpha || !leaf.has_votes()) return {};
  const Gaussian on{static_cast<double>(m) - leaf.onset->mean, leaf.onset->variance};
  const Gaussian off{static_cast<double>(m) + leaf.offset->mean, leaf.offset->variance};
  return {leaf.p_pos * on.density(static_cast<double>(n)),
          leaf.p_pos * off.density(static_cast<double>(n))};
}

Vote vote_forest(const Forest& forest, std::span<const double> x, long m, double alpha, long n) {
  Vote sum;
  for (std::size_t t = 0; t < forest.trees.size(); ++t) {
    const Vote v = vote_tree(descend(forest, t, x), m, alpha, n);
    sum.onset += v.onset;
    sum.offset += v.offset;
  }
  const auto trees = static_cast<double>(forest.trees.size());
  return {sum.onset / trees, sum.offset / trees};
}

LeafAssignments assign_leaves(const FeatureMatrix& features, const Forest& forest) {
  if (!features.empty() && features.dim() != forest.dim)
    throw Error("feature dimensionality " + std::to_string(features.dim()) + " does not match model (" +
                std::to_string(forest.dim) + ")");
  LeafAssignments out(features.rows(), std::vector<int>(forest.trees.size()));
  for (std::size_t m = 0; m < features.rows(); ++m)
    for (std::size_t t = 0; t < forest.trees.size(); ++t)
      out[m][t] = forest.trees[t].leaf_index(features.row(m));
  return out;
}

ScoreTrack accumulate(const LeafAssignments& leaves, const Forest& forest, double alpha, bool normalize) {
  const std::size_t n = leaves.size();
  ScoreTrack track{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  const auto trees = static_cast<double>(forest.trees.size());

  // kernels[t][node]; built on first use
  std::vector<std::vector<std::optional<std::pair<Kernel, Kernel>>>> kernels(forest.trees.size());
  for (std::size_t t = 0; t < forest.trees.size(); ++t) kernels[t].resize(forest.trees[t].nodes().size());

  for (std::size_t m = 0; m < n; ++m) {
    for (std::size_t t = 0; t < forest.trees.size(); ++t) {
      const auto node = static_cast<std::size_t>(leaves[m][t]);
      const LeafModel& leaf = forest.trees[t].nodes()[node].leaf;
      if (leaf.p_pos < alpha || !leaf.has_votes()) continue;
      auto& cached = kernels[t][node];
      if (!cached) {
        const double weight = leaf.p_pos / trees;
        cached.emplace(make_kernel(*leaf.onset, -leaf.onset->mean, weight),
                       make_kernel(*leaf.offset, leaf.offset->mean, weight));
      }
      add_kernel(track.onset, cached->first, static_cast<long>(m));
      add_kernel(track.offset, cached->second, static_cast<long>(m));
    }
  }
  if (normalize) {
    for (double& v : track.onset) v /= forest.z_plus;
    for (double& v : track.offset) v /= forest.z_minus;
  }
  return track;
}

ScoreTrack accumulate(const FeatureMatrix& features, const Forest& forest, double alpha, bool normalize) {
  return accumulate(assign_leaves(features, forest), forest, alpha, normalize);
}

std::vector<double> smooth(std::span<const double> values, int window) {
  if (window < 1 || window % 2 == 0) throw Error("smooth: window must be odd and >= 1");
  std::vector<double> out(values.begin(), values.end());
  if (window == 1) return out;
  const long half = window / 2;
  const long n = static_cast<long>(values.size());
  for (long i = 0; i < n; ++i) {
    const long lo = std::max(0L, i - half);
    const long hi = std::min(n - 1, i + half);
    double acc = 0.0;
    for (long k = lo; k <= hi; ++k) acc += values[static_cast<std::size_t>(k)];
    out[static_cast<std::size_t>(i)] = acc / static_cast<double>(hi - lo + 1);
  }
  return out;
}

ScoreTrack smooth(const ScoreTrack& track, int window) {
  return {smooth(track.onset, window), smooth(track.offset, window)};
}

std::vector<std::size_t> find_peaks(std::span<const double> values, double beta) {
  std::vector<std::size_t> peaks;
  const std::size_t n = values.size();
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[j + 1] == values[i]) ++j;
    const bool rises = i == 0 || values[i - 1] < values[i];
    const bool falls = j + 1 == n || values[j + 1] < values[i];
    if (rises && falls && values[i] >= beta) peaks.push_back(i);
    i = j + 1;
  }
  return peaks;
}

std::vector<Detection> extract_events(const ScoreTrack& track, double beta, double hop,
                                      double time_offset, const std::string& label) {
  const auto onsets = find_peaks(track.onset, beta);
  const auto offsets = find_peaks(track.offset, beta);
  std::vector<Detection> out;
  std::size_t next = 0;
  for (std::size_t on : onsets) {
    while (next < offsets.size() && offsets[next] <= on) ++next;
    if (next == offsets.size()) break;
    const std::size_t off = offsets[next++];
    out.push_back({label, static_cast<double>(on) * hop + time_offset,
                   static_cast<double>(off) * hop + time_offset,
                   std::min(track.onset[on], track.offset[off])});
  }
  return out;
}

std::vector<Detection> filter_duration(std::vector<Detection> events, double max_train_duration,
                                       double factor) {
  const double limit = factor * max_train_duration;
  std::erase_if(events, [limit](const Detection& d) { return d.offset - d.onset > limit; });
  return events;
}

std::vector<Detection> detect_class(const FeatureMatrix& features, const Forest& forest,
                                    const DetectConfig& cfg) {
  cfg.validate();
  const ScoreTrack track = smooth(accumulate(features, forest, cfg.alpha), cfg.smooth_window);
  auto events = extract_events(track, cfg.beta, features.hop_len(), 0.5 * features.window_len(),
                               forest.class_label);
  if (forest.max_train_event_duration > 0.0)
    events = filter_duration(std::move(events), forest.max_train_event_duration, cfg.duration_factor);
  return events;
}

std::vector<Detection> detect_stream(const Waveform& audio, std::span<const Forest> forests,
                                     std::span<const DetectConfig> cfgs) {
  if (forests.empty()) return {};
  if (cfgs.size() != forests.size()) throw Error("detect_stream: one detect config per model required");
  for (const auto& f : forests)
    if (f.feature_fingerprint != forests.front().feature_fingerprint)
      throw Error("feature fingerprint mismatch between models '" + forests.front().class_label +
                  "' and '" + f.class_label + "'");

  const FeatureMatrix features = gammatone_cepstra(audio, forests.front().feature_config);
  std::vector<Detection> all;
  for (std::size_t i = 0; i < forests.size(); ++i) {
    auto events = detect_class(features, forests[i], cfgs[i]);
    all.insert(all.end(), events.begin(), events.end());
  }
  std::stable_sort(all.begin(), all.end(), [](const Detection& a, const Detection& b) {
    return a.onset < b.onset || (a.onset == b.onset && a.label < b.label);
  });
  return all;
}

std::string format_detections(std::span<const Detection> detections) {
  std::string out;
  char buf[64];
  for (const auto& d : detections) {
    std::snprintf(buf, sizeof buf, "%.3f\t%.3f\t", d.onset, d.offset);
    out += buf;
    out += d.label;
    out += '\n';
  }
  return out;
}

void write_detections(const std::filesystem::path& path, std::span<const Detection> detections) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write detection file: " + path.string());
  out << format_detections(detections);
}

void write_score_csv(const std::filesystem::path& path, const ScoreTrack& track) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write score file: " + path.string());
  out.precision(17);
  out << "n,f_plus,f_minus\n";
  for (std::size_t n = 0; n < track.size(); ++n)
    out << n << ',' << track.onset[n] << ',' << track.offset[n] << '\n';
}

}  // namespace sedforest
