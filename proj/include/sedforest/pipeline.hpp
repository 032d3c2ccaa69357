#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sedforest/dataset.hpp"
#include "sedforest/detect.hpp"
#include "sedforest/eval.hpp"
#include "sedforest/features.hpp"
#include "sedforest/forest.hpp"

namespace sedforest {

// ---------------------------------------------------------------------------
// Manifests: a JSON index of (audio, annotations, fold) triples. Paths are
// relative to the manifest's directory.

struct ManifestEntry {
  std::filesystem::path audio;
  std::filesystem::path annotations;
  std::string fold;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> fold(const std::string& name) const;
  std::filesystem::path resolve(const std::filesystem::path& p) const;
};

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Reads every entry of a fold.
std::vector<Clip> load_fold(const Manifest& manifest, const std::string& fold);

/// Writes the benchmark as WAV + annotation files plus manifest.json under
/// `dir`. Training instances go to fold "train", the scenes to "dev" and
/// "test". Returns the manifest path.
std::filesystem::path write_benchmark(const SynthBenchmark& bench, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Configuration

struct TrainOptions {
  std::vector<double> snr_levels{-6.0, 0.0, 6.0};
  double min_overlap_fraction = 0.5;
  double context_padding = 0.5;  // seconds of background around each training clip
};

struct RunConfig {
  FeatureConfig features;
  ForestConfig forest;
  DetectConfig detect;
  TrainOptions train;
  TuneOptions tune;
  std::uint64_t seed = 0;
  int threads = 1;
};

nlohmann::ordered_json to_json(const RunConfig& cfg);
/// Keys missing from `j` keep their value from `base`; unknown keys throw.
RunConfig run_config_from_json(const nlohmann::ordered_json& j, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

// ---------------------------------------------------------------------------
// Training

/// Concatenated samples of `scenes` lying outside every annotated event.
Waveform background_pool(std::span<const Clip> scenes);

/// Places `clip` into a random excerpt of `pool` with `padding` seconds of
/// background on each side; annotations shift accordingly.
Clip embed_in_background(const Clip& clip, const Waveform& pool, double padding, std::uint64_t seed);

/// Training inputs shared by every class.
struct TrainingCorpus {
  std::vector<Clip> clips;
  std::vector<FeatureMatrix> features;  // one per clip
  FeatureMatrix background;             // background rows of the held-out scenes
  std::vector<std::string> classes;
  std::map<std::string, double> max_event_duration;  // seconds, per class
};

/// Builds the mixture pool from train clips, using held-out scenes (and
/// their features) for background audio. Train clips holding exactly one
/// event are treated as isolated instances and mixed; other clips are used
/// as they are.
TrainingCorpus build_corpus(std::span<const Clip> train, std::span<const Clip> held_out,
                            std::span<const FeatureMatrix> held_out_features, const RunConfig& cfg);

/// Labeled segments for one class plus injected background negatives.
std::vector<Segment> class_training_set(const TrainingCorpus& corpus, const std::string& label,
                                        std::uint64_t seed);

/// Sets z_plus / z_minus to the largest ungated (alpha = 0) onset and offset
/// scores over `held_out`, after smoothing with `smooth_window` (1 when a
/// track stays at zero). Gated tracks are pointwise no larger, so tuned
/// scores on `held_out` never exceed 1.
void fit_normalization(Forest& forest, std::span<const FeatureMatrix> held_out, int smooth_window);

/// Forest seed of one class, derived from the run seed and the label.
std::uint64_t class_seed(std::uint64_t run_seed, const std::string& label);

/// Train, calibrate and normalize one class.
Forest train_class(const TrainingCorpus& corpus, const std::string& label,
                   std::span<const FeatureMatrix> held_out, const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Thresholds sidecar

using Thresholds = std::map<std::string, TuneResult>;

std::string serialize_thresholds(const Thresholds& t);
Thresholds parse_thresholds(const std::string& text);
void save_thresholds(const std::filesystem::path& path, const Thresholds& t);
Thresholds load_thresholds(const std::filesystem::path& path);

/// Per-model detect configs: thresholds from `t` when present, else `base`.
std::vector<DetectConfig> detect_configs(std::span<const Forest> forests, const Thresholds& t,
                                         const DetectConfig& base);

std::vector<DevStream> make_dev_streams(std::span<const Clip> scenes, const FeatureConfig& features);

}  // namespace sedforest
