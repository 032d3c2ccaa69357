#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sedforest/dataset.hpp"
#include "sedforest/detect.hpp"
#include "sedforest/features.hpp"
#include "sedforest/forest.hpp"

namespace sedforest {

/// Counts pooled over grid cells (segment metrics) or events.
struct ErrorCounts {
  std::size_t N = 0;  // active reference count
  std::size_t S = 0;
  std::size_t D = 0;
  std::size_t I = 0;
  std::size_t TP = 0;
  std::size_t FP = 0;
  std::size_t FN = 0;

  std::size_t errors() const { return S + D + I; }
  /// (S + D + I) / N; undefined when N = 0.
  std::optional<double> error_rate() const;
  /// 2 TP / (2 TP + FP + FN); undefined when there is nothing to count.
  std::optional<double> f1() const;
  ErrorCounts& operator+=(const ErrorCounts& o);
};

using SegmentScore = ErrorCounts;

struct MetricReport {
  ErrorCounts overall;
  std::map<std::string, ErrorCounts> per_class;
};

/// Activity on a fixed grid of `resolution` seconds; a class is active in a
/// cell when any of its events overlaps the cell. Per cell,
/// S = min(FN, FP), D = FN - S, I = FP - S.
MetricReport segment_metrics(std::span<const EventAnnotation> ref, std::span<const EventAnnotation> hyp,
                             double resolution = 1.0);

/// Greedy one-to-one matching on onsets within `collar` seconds. Same-label
/// matches are true positives; leftover ref/hyp pairs with different labels
/// inside the collar are substitutions.
MetricReport event_metrics(std::span<const EventAnnotation> ref, std::span<const EventAnnotation> hyp,
                           double collar = 0.2);

std::vector<EventAnnotation> to_annotations(std::span<const Detection> detections);

/// Plain-text table: one row per class plus an overall row.
std::string format_report(const MetricReport& report, const std::string& title);
/// scope,class,N,S,D,I,TP,FP,FN,ER,F1
std::string report_csv(const MetricReport& report, const std::string& scope);

// ---------------------------------------------------------------------------
// Threshold tuning

struct DevStream {
  FeatureMatrix features;
  std::vector<EventAnnotation> references;
};

struct ThresholdGrid {
  std::vector<double> alphas;
  std::vector<double> betas;

  /// alpha in {0, 0.05, ..., 1}, beta in {0, 0.025, ..., 1}.
  static ThresholdGrid standard();
};

struct TuneOptions {
  bool allow_ignorance = false;
  double ignorance_beta = 1.01;
  int smooth_window = 11;
  double duration_factor = 3.0;
  double resolution = 1.0;
};

struct TuneResult {
  std::string label;
  double alpha = 0.0;
  double beta = 0.0;
  std::size_t errors = 0;          // S + D + I of this class over all streams
  std::size_t reference_count = 0;  // N of this class over all streams
  std::size_t evaluated = 0;        // grid points scored
  bool ignored = false;             // the ignorance threshold won

  std::optional<double> error_rate() const;
};

/// Detections of one class on one stream for fixed (alpha, beta).
std::vector<Detection> detect_with(const DevStream& stream, const Forest& forest, double alpha,
                                   double beta, const TuneOptions& options);

/// Class-wise segment error count of `hyp` against the class's references.
ErrorCounts class_segment_counts(std::span<const EventAnnotation> ref, std::span<const Detection> hyp,
                                 const std::string& label, double resolution);

/// Exhaustive grid search minimizing the class's pooled segment error count.
/// Ties prefer the larger beta, then the larger alpha. With allow_ignorance,
/// (alpha = max grid alpha, beta = ignorance_beta) is a candidate under which
/// the class emits nothing.
TuneResult tune_thresholds(std::span<const DevStream> streams, const Forest& forest,
                           const ThresholdGrid& grid, const TuneOptions& options);

}  // namespace sedforest
