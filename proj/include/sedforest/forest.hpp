#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sedforest/dataset.hpp"
#include "sedforest/features.hpp"
#include "sedforest/random.hpp"

namespace sedforest {

struct ForestConfig {
  int n_trees = 10;
  double subsample_ratio = 0.5;
  int n_candidate_tests = 20000;
  int max_depth = 12;
  int min_segments = 20;
  int steer_depth = 9;  // depths <= steer_depth optimize class purity
  double variance_floor = 1e-6;  // segments^2
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ForestConfig&, const ForestConfig&) = default;
};

enum class Objective { classification, regression };

/// Binary test x[r] - x[q] > tau (channels are zero-based).
struct SplitTest {
  int r = 0;
  int q = 0;
  double tau = 0.0;

  bool operator()(std::span<const double> x) const { return x[r] - x[q] > tau; }
  friend bool operator==(const SplitTest&, const SplitTest&) = default;
};

/// 1 iff x[r] - x[q] > tau.
int split_test(std::span<const double> x, int r, int q, double tau);

struct Gaussian {
  double mean = 0.0;
  double variance = 1.0;

  double density(double x) const;
  double stddev() const;
  friend bool operator==(const Gaussian&, const Gaussian&) = default;
};

struct LeafModel {
  double p_pos = 0.0;
  double p_neg = 1.0;
  std::optional<Gaussian> onset;   // distance to the event's first segment
  std::optional<Gaussian> offset;  // distance to the event's last segment
  std::size_t n_train = 0;

  bool has_votes() const { return onset.has_value() && offset.has_value(); }
  friend bool operator==(const LeafModel&, const LeafModel&) = default;
};

struct TreeNode {
  bool is_leaf = true;
  SplitTest test;
  Objective objective = Objective::classification;
  int left = -1;
  int right = -1;
  int depth = 1;
  LeafModel leaf;
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// Nodes are stored in pre-order; node 0 is the root.
class Tree {
 public:
  Tree() = default;
  explicit Tree(std::vector<TreeNode> nodes);

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  std::vector<TreeNode>& mutable_nodes() { return nodes_; }
  /// Index of the leaf reached by x (test true -> right child).
  int leaf_index(std::span<const double> x) const;
  const LeafModel& descend(std::span<const double> x) const;
  int max_depth() const;
  std::size_t leaf_count() const;
  friend bool operator==(const Tree&, const Tree&) = default;

 private:
  std::vector<TreeNode> nodes_;
};

struct Forest {
  std::string class_label;
  std::string feature_fingerprint;
  FeatureConfig feature_config;
  ForestConfig config;
  std::size_t dim = 0;
  double z_plus = 1.0;
  double z_minus = 1.0;
  double max_train_event_duration = 0.0;  // seconds
  std::vector<Tree> trees;
};

/// Metadata the trainer attaches to the model.
struct TrainingContext {
  std::string class_label;
  FeatureConfig feature_config;
  double hop_len = 0.01;  // seconds per segment index
};

// --- node objectives -------------------------------------------------------

/// Binary entropy (log base 2) of a label multiset given by its counts.
double entropy(std::size_t n_pos, std::size_t n_neg);
double entropy(std::span<const Segment> set);

double info_gain(const SplitTest& test, std::span<const Segment> set);

/// Sum over both children of squared deviations of positive distance vectors
/// from that child's mean. Children without positives contribute 0.
double distance_variation(const SplitTest& test, std::span<const Segment> set);

// --- node construction -----------------------------------------------------

struct SplitChoice {
  SplitTest test;
  double score = 0.0;  // gain (classification) or variation (regression)
  std::vector<std::size_t> right;  // positions into the evaluated set
  std::vector<std::size_t> left;
};

/// The exact candidate sequence select_best_test draws for this set and rng
/// state: r, q uniform over channels, tau uniform over the observed range of
/// x[r] - x[q].
std::vector<SplitTest> draw_candidates(std::span<const Segment> set, int n_candidates, Rng& rng);

/// Best of n_candidates random tests, or nullopt when none is valid (an empty
/// child, or for regression a child without positives). Ties keep the first.
std::optional<SplitChoice> select_best_test(std::span<const Segment> set, int n_candidates,
                                            Objective objective, Rng& rng);

LeafModel make_leaf(std::span<const Segment> set, double variance_floor);

Tree train_tree(std::span<const Segment> subset, const ForestConfig& cfg, Rng& rng);

/// Seed of tree t's growth stream; subsampling uses a separate stream.
std::uint64_t tree_seed(std::uint64_t forest_seed, int tree);

/// Grows cfg.n_trees trees on independent subsamples and calibrates them on
/// the full set. Throws if the set lacks positives or negatives.
Forest train_forest(std::span<const Segment> set, const ForestConfig& cfg,
                    const TrainingContext& ctx, int threads = 1);

struct CalibrationReport {
  // arrivals[t][node] = training segments that reached node (leaves only)
  std::vector<std::vector<std::size_t>> arrivals;
};

/// Re-estimates every leaf from the segments of `set` that reach it.
/// Unreached leaves keep their model with n_train = 0.
CalibrationReport calibrate(Forest& forest, std::span<const Segment> set);

}  // namespace sedforest
