#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sedforest/audio.hpp"
#include "sedforest/features.hpp"

namespace sedforest {

struct EventAnnotation {
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds
  std::string label;

  double duration() const { return offset - onset; }
  friend bool operator==(const EventAnnotation&, const EventAnnotation&) = default;
};

/// Distances (in segments) from a positive segment to the first and last
/// segment of its event.
struct DistanceVector {
  double onset = 0.0;
  double offset = 0.0;
  friend bool operator==(const DistanceVector&, const DistanceVector&) = default;
};

struct Segment {
  std::vector<double> x;
  bool positive = false;
  std::optional<DistanceVector> d;  // present iff positive
  std::size_t index = 0;            // segment index within its stream
};

/// A piece of audio together with every event it contains.
struct Clip {
  Waveform audio;
  std::vector<EventAnnotation> events;
};

/// One isolated event recording.
struct LabeledWaveform {
  Waveform audio;
  std::string label;
};

struct MixtureSpec {
  double snr_db = 0.0;
  double min_overlap_fraction = 0.5;
  std::uint64_t rng_seed = 0;
};

/// Parses "onset<sep>offset<sep>label" lines (tab or comma separated). Blank
/// lines and lines starting with '#' are skipped. Result is sorted by onset.
std::vector<EventAnnotation> parse_annotations(std::string_view text);
std::vector<EventAnnotation> load_annotations(const std::filesystem::path& path);
/// Writes onset<TAB>offset<TAB>label lines with 3-decimal seconds.
void write_annotations(const std::filesystem::path& path, std::span<const EventAnnotation> events);
std::string format_annotations(std::span<const EventAnnotation> events);

/// First and last segment whose centre falls in [onset, offset); nullopt if none.
std::optional<std::pair<std::size_t, std::size_t>> event_segment_span(const FeatureMatrix& features,
                                                                      const EventAnnotation& event);

/// Labels every row of `features` against the events of `target_class`.
std::vector<Segment> label_segments(const FeatureMatrix& features,
                                    std::span<const EventAnnotation> annotations,
                                    std::string_view target_class);

/// Returns `event` scaled so that its RMS sits `snr_db` above the background RMS.
Waveform scale_to_snr(const Waveform& event, const Waveform& background, double snr_db);
double snr_gain(double event_rms, double background_rms, double snr_db);

/// Adds each negative on top of the anchor event at a seeded random offset
/// whose intersection with the anchor covers at least
/// min_overlap_fraction x anchor duration. The canvas grows to hold every
/// constituent. Works for positive/negative and negative/negative mixtures.
Clip mix_overlap(const LabeledWaveform& anchor, std::span<const LabeledWaveform> negatives,
                 const MixtureSpec& spec);

/// Rows of `features` whose segment centre lies outside every annotation.
FeatureMatrix background_rows(const FeatureMatrix& features, std::span<const EventAnnotation> events);

/// Appends as many background rows (as negatives) as `train` has positives.
std::vector<Segment> inject_background_segments(std::vector<Segment> train,
                                                const FeatureMatrix& background,
                                                std::uint64_t rng_seed);

/// Training clips built from isolated instances: every instance scaled to
/// each SNR level, one overlapped mixture per instance (one negative from
/// every other class), and one negative/negative pair per instance.
std::vector<Clip> build_training_clips(std::span<const LabeledWaveform> instances,
                                       double background_rms, std::span<const double> snr_levels,
                                       double min_overlap_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic benchmark

struct SynthConfig {
  int n_classes = 3;
  int instances_per_class = 20;
  double scene_len = 150.0;  // seconds
  double snr_db = 0.0;
  std::uint64_t seed = 1;
  int sample_rate = 16000;
  double background_rms = 0.05;
  double min_event_len = 0.6;
  double max_event_len = 1.2;
  int dev_scenes = 3;
};

struct SynthBenchmark {
  std::vector<std::string> classes;
  std::vector<LabeledWaveform> train;  // isolated, unscaled instances
  std::vector<Clip> dev;                // scenes for tuning and normalization
  Clip test;                            // held-out scene
};

/// Name of synthetic class k ("class<k>").
std::string synth_class_name(int k);
/// Glide rate of the synthetic tone bursts, octaves per second.
inline constexpr double kSynthGlide = 0.3;
/// Frequency ratio between the falling partial (at its end) and the base.
inline constexpr double kSynthPartialRatio = 1.55;

/// Base frequency of class k.
double synth_class_frequency(int k);
/// Highest frequency a class k event of at most max_duration seconds reaches.
double synth_max_frequency(int k, double max_duration);
/// One instance of class k: an AM tone burst whose fundamental rises from
/// the base frequency while a second partial falls towards
/// kSynthPartialRatio x base at the offset, so each segment carries both
/// the time since onset and the time to offset. Seeded jitter and phases.
Waveform synth_event(int k, double duration, std::uint64_t seed, int sample_rate);
/// Pink noise (Kellet filter on white Gaussian noise), scaled to `target_rms`.
Waveform pink_noise(double duration, double target_rms, std::uint64_t seed, int sample_rate);
/// Scene with `per_class` events of each class; a third of the events are
/// paired into overlapping placements of two different classes.
Clip synth_scene(const SynthConfig& cfg, std::uint64_t seed);
SynthBenchmark synth_benchmark(const SynthConfig& cfg);

/// Number of unordered annotation pairs with positive temporal intersection.
std::size_t count_overlapping_pairs(std::span<const EventAnnotation> events);

}  // namespace sedforest
