#pragma once

#include <span>
#include <string>
#include <vector>

#include "sedforest/audio.hpp"
#include "sedforest/features.hpp"
#include "sedforest/forest.hpp"

namespace sedforest {

struct DetectConfig {
  double alpha = 0.5;  // minimum leaf P(positive) for a vote to count
  double beta = 0.5;   // minimum normalized score of an onset/offset peak
  int smooth_window = 11;
  double duration_factor = 3.0;

  void validate() const;
};

/// Onset and offset confidence per segment index.
struct ScoreTrack {
  std::vector<double> onset;
  std::vector<double> offset;

  std::size_t size() const { return onset.size(); }
};

struct Detection {
  std::string label;
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds
  double confidence = 0.0;
};

struct Vote {
  double onset = 0.0;
  double offset = 0.0;
};

/// Votes are evaluated within this many standard deviations of their mean.
inline constexpr double kVoteTruncationSigmas = 6.0;

/// Leaf reached by x; throws on a dimensionality mismatch.
const LeafModel& descend(const Forest& forest, std::size_t tree, std::span<const double> x);

/// Contribution of segment m, landing in `leaf`, to query index n.
Vote vote_tree(const LeafModel& leaf, long m, double alpha, long n);

/// Mean of vote_tree over all trees.
Vote vote_forest(const Forest& forest, std::span<const double> x, long m, double alpha, long n);

/// Leaf index reached in every tree by every segment, [segment][tree].
using LeafAssignments = std::vector<std::vector<int>>;
LeafAssignments assign_leaves(const FeatureMatrix& features, const Forest& forest);

/// Sums every segment's truncated votes over the stream. With `normalize`,
/// the tracks are divided by the forest's z_plus / z_minus.
ScoreTrack accumulate(const FeatureMatrix& features, const Forest& forest, double alpha,
                      bool normalize = true);
ScoreTrack accumulate(const LeafAssignments& leaves, const Forest& forest, double alpha,
                      bool normalize = true);

/// Centred moving average; windows shrink at the edges. w = 1 is identity.
std::vector<double> smooth(std::span<const double> values, int window);
ScoreTrack smooth(const ScoreTrack& track, int window);

/// Indices of local maxima with value >= beta; plateaus report their
/// leftmost index.
std::vector<std::size_t> find_peaks(std::span<const double> values, double beta);

/// Pairs each onset peak, in chronological order, with the earliest unused
/// offset peak at a strictly later index. Time of index n is
/// n * hop + time_offset.
std::vector<Detection> extract_events(const ScoreTrack& track, double beta, double hop,
                                      double time_offset = 0.0, const std::string& label = {});

/// Drops events longer than factor * max_train_duration.
std::vector<Detection> filter_duration(std::vector<Detection> events, double max_train_duration,
                                       double factor);

/// Accumulate, smooth, extract and filter for one forest on precomputed
/// features.
std::vector<Detection> detect_class(const FeatureMatrix& features, const Forest& forest,
                                    const DetectConfig& cfg);

/// Features once, then every class; union sorted by onset.
std::vector<Detection> detect_stream(const Waveform& audio, std::span<const Forest> forests,
                                     std::span<const DetectConfig> cfgs);

/// onset<TAB>offset<TAB>label lines, 3-decimal seconds.
std::string format_detections(std::span<const Detection> detections);
void write_detections(const std::filesystem::path& path, std::span<const Detection> detections);
/// n,f_plus,f_minus rows.
void write_score_csv(const std::filesystem::path& path, const ScoreTrack& track);

}  // namespace sedforest
