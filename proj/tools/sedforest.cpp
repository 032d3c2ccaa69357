// Command-line front end: synth, train, tune, detect, evaluate.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sedforest/audio.hpp"
#include "sedforest/dataset.hpp"
#include "sedforest/detect.hpp"
#include "sedforest/error.hpp"
#include "sedforest/eval.hpp"
#include "sedforest/model_io.hpp"
#include "sedforest/pipeline.hpp"

namespace fs = std::filesystem;
using namespace sedforest;

namespace {

// Flags shared by the model commands. Unset flags leave the config file value.
struct CommonFlags {
  std::string config_path;
  bool print_config = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<int> trees;
  std::optional<int> max_depth;
  std::optional<int> min_leaf;
  std::optional<int> steer_depth;
  std::optional<int> tests_per_node;
  std::optional<double> subsample;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<int> smooth_window;
  std::optional<double> duration_factor;
  bool allow_ignorance = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app->add_flag("--print-config", print_config, "Print the resolved configuration and exit");
    app->add_option("--seed", seed, "Master random seed");
    app->add_option("--threads", threads, "Worker threads for tree training")->check(CLI::PositiveNumber);
    app->add_option("--trees", trees, "Trees per forest");
    app->add_option("--max-depth", max_depth, "Maximum tree depth");
    app->add_option("--min-leaf", min_leaf, "Nodes with at most this many segments become leaves");
    app->add_option("--steer-depth", steer_depth, "Depths up to this value split on class purity");
    app->add_option("--tests-per-node", tests_per_node, "Random candidate tests per node");
    app->add_option("--subsample", subsample, "Fraction of the training set drawn per tree");
    app->add_option("--alpha", alpha, "Vote gate on leaf positive probability");
    app->add_option("--beta", beta, "Peak threshold on normalized scores");
    app->add_option("--smooth-window", smooth_window, "Moving average width in segments (odd)");
    app->add_option("--duration-factor", duration_factor, "Reject events longer than this x the longest training event");
  }

  RunConfig resolve() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    if (trees) cfg.forest.n_trees = *trees;
    if (max_depth) cfg.forest.max_depth = *max_depth;
    if (min_leaf) cfg.forest.min_segments = *min_leaf;
    if (steer_depth) cfg.forest.steer_depth = *steer_depth;
    if (tests_per_node) cfg.forest.n_candidate_tests = *tests_per_node;
    if (subsample) cfg.forest.subsample_ratio = *subsample;
    if (alpha) cfg.detect.alpha = *alpha;
    if (beta) cfg.detect.beta = *beta;
    if (smooth_window) cfg.detect.smooth_window = *smooth_window;
    if (duration_factor) cfg.detect.duration_factor = *duration_factor;
    if (allow_ignorance) cfg.tune.allow_ignorance = true;
    cfg.tune.smooth_window = cfg.detect.smooth_window;
    cfg.tune.duration_factor = cfg.detect.duration_factor;
    cfg.features.validate();
    cfg.forest.validate();
    cfg.detect.validate();
    return cfg;
  }
};

bool print_if_requested(const CommonFlags& flags, const RunConfig& cfg) {
  if (!flags.print_config) return false;
  std::cout << to_json(cfg).dump(2) << '\n';
  return true;
}

void log(const std::string& msg) { std::cerr << msg << '\n'; }

std::vector<Forest> load_models(const std::vector<std::string>& paths) {
  std::vector<Forest> out;
  for (const auto& p : paths) out.push_back(load_forest(p));
  return out;
}

std::vector<FeatureMatrix> features_of(std::span<const DevStream> streams) {
  std::vector<FeatureMatrix> out;
  for (const auto& s : streams) out.push_back(s.features);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Overlapping sound event detection with joint classification-regression forests"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Write the synthetic benchmark (WAV + annotations + manifest)");
  SynthConfig synth_cfg;
  std::string synth_out;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--classes", synth_cfg.n_classes, "Number of classes")->capture_default_str();
  synth->add_option("--instances", synth_cfg.instances_per_class, "Instances per class")->capture_default_str();
  synth->add_option("--scene-len", synth_cfg.scene_len, "Scene length in seconds")->capture_default_str();
  synth->add_option("--snr", synth_cfg.snr_db, "Event-to-background SNR in dB")->capture_default_str();
  synth->add_option("--dev-scenes", synth_cfg.dev_scenes, "Development scenes")->capture_default_str();
  synth->add_option("--seed", synth_cfg.seed, "Random seed")->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train one forest per class");
  CommonFlags train_flags;
  train_flags.attach(train);
  std::string train_manifest, train_out;
  std::vector<std::string> train_classes;
  train->add_option("--manifest", train_manifest, "Dataset manifest")->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Directory for <class>.model.json files");
  train->add_option("--class", train_classes, "Classes to train (default: all)");

  // tune
  auto* tune = app.add_subcommand("tune", "Grid-search alpha and beta per class on the dev fold");
  CommonFlags tune_flags;
  tune_flags.attach(tune);
  std::string tune_manifest, tune_out;
  std::vector<std::string> tune_models;
  tune->add_option("--manifest", tune_manifest, "Dataset manifest")->check(CLI::ExistingFile);
  tune->add_option("--models", tune_models, "Model files")->check(CLI::ExistingFile);
  tune->add_option("--out", tune_out, "Thresholds file to write");
  tune->add_flag("--allow-ignorance", tune_flags.allow_ignorance, "Add a beta above 1 under which a class stays silent");

  // detect
  auto* detect = app.add_subcommand("detect", "Detect events in an audio file");
  CommonFlags detect_flags;
  detect_flags.attach(detect);
  std::string detect_audio, detect_out, detect_thresholds, dump_scores;
  std::vector<std::string> detect_models;
  detect->add_option("--audio", detect_audio, "Input WAV file")->check(CLI::ExistingFile);
  detect->add_option("--models", detect_models, "Model files")->check(CLI::ExistingFile);
  detect->add_option("--thresholds", detect_thresholds, "Tuned thresholds file")->check(CLI::ExistingFile);
  detect->add_option("--out", detect_out, "Detection file (default: stdout)");
  detect->add_option("--dump-scores", dump_scores, "Write <prefix>_<class>.csv score tracks");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Score a hypothesis against a reference");
  std::string eval_ref, eval_hyp, eval_mode = "both", eval_csv;
  double resolution = 1.0, collar = 0.2;
  evaluate->add_option("--ref", eval_ref, "Reference annotations")->required();
  evaluate->add_option("--hyp", eval_hyp, "Hypothesis annotations")->required();
  evaluate->add_option("--mode", eval_mode, "segment, event or both")
      ->check(CLI::IsMember({"segment", "event", "both"}))
      ->capture_default_str();
  evaluate->add_option("--resolution", resolution, "Segment grid in seconds")->capture_default_str();
  evaluate->add_option("--collar", collar, "Onset collar in seconds")->capture_default_str();
  evaluate->add_option("--csv", eval_csv, "Also write the report as CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      const auto bench = synth_benchmark(synth_cfg);
      const fs::path manifest = write_benchmark(bench, synth_out);
      std::cout << manifest.string() << '\n';
      return 0;
    }

    if (train->parsed()) {
      const RunConfig cfg = train_flags.resolve();
      if (print_if_requested(train_flags, cfg)) return 0;
      if (train_manifest.empty() || train_out.empty()) throw Error("train: --manifest and --out are required");
      const Manifest manifest = load_manifest(train_manifest);
      const auto train_clips = load_fold(manifest, "train");
      const auto dev_clips = load_fold(manifest, "dev");
      if (dev_clips.empty()) throw Error("train: manifest has no dev entries for normalization");
      const auto dev = make_dev_streams(dev_clips, cfg.features);
      const auto dev_features = features_of(dev);
      const auto start = std::chrono::steady_clock::now();
      const TrainingCorpus corpus = build_corpus(train_clips, dev_clips, dev_features, cfg);
      const auto classes = train_classes.empty() ? corpus.classes : train_classes;
      fs::create_directories(train_out);
      for (const auto& label : classes) {
        const Forest forest = train_class(corpus, label, dev_features, cfg);
        const fs::path out = fs::path(train_out) / (label + ".model.json");
        save_forest(out, forest);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        char line[256];
        std::snprintf(line, sizeof line, "trained %s: %zu trees, z+=%.4g z-=%.4g (%.1f s)", label.c_str(),
                      forest.trees.size(), forest.z_plus, forest.z_minus, secs);
        log(line);
        std::cout << out.string() << '\n';
      }
      return 0;
    }

    if (tune->parsed()) {
      const RunConfig cfg = tune_flags.resolve();
      if (print_if_requested(tune_flags, cfg)) return 0;
      if (tune_manifest.empty() || tune_out.empty() || tune_models.empty())
        throw Error("tune: --manifest, --models and --out are required");
      const Manifest manifest = load_manifest(tune_manifest);
      const auto dev_clips = load_fold(manifest, "dev");
      if (dev_clips.empty()) throw Error("tune: empty dev set");
      const auto forests = load_models(tune_models);
      const auto dev = make_dev_streams(dev_clips, forests.front().feature_config);
      Thresholds thresholds;
      for (const auto& forest : forests) {
        const TuneResult r = tune_thresholds(dev, forest, ThresholdGrid::standard(), cfg.tune);
        char line[256];
        std::snprintf(line, sizeof line, "%s: alpha=%.3f beta=%.3f errors=%zu/%zu%s (%zu grid points)",
                      r.label.c_str(), r.alpha, r.beta, r.errors, r.reference_count,
                      r.ignored ? " ignored" : "", r.evaluated);
        log(line);
        thresholds[r.label] = r;
      }
      save_thresholds(tune_out, thresholds);
      return 0;
    }

    if (detect->parsed()) {
      const RunConfig cfg = detect_flags.resolve();
      if (print_if_requested(detect_flags, cfg)) return 0;
      if (detect_audio.empty()) throw Error("detect: --audio is required");
      const auto forests = load_models(detect_models);
      auto cfgs = detect_configs(forests, detect_thresholds.empty() ? Thresholds{} : load_thresholds(detect_thresholds),
                                 cfg.detect);
      for (auto& c : cfgs) {
        if (detect_flags.alpha) c.alpha = *detect_flags.alpha;
        if (detect_flags.beta) c.beta = *detect_flags.beta;
      }
      const Waveform audio = load_audio(detect_audio);
      const auto detections = detect_stream(audio, forests, cfgs);
      if (!dump_scores.empty() && !forests.empty()) {
        const FeatureMatrix features = gammatone_cepstra(audio, forests.front().feature_config);
        for (std::size_t i = 0; i < forests.size(); ++i) {
          const ScoreTrack track =
              smooth(accumulate(features, forests[i], cfgs[i].alpha), cfgs[i].smooth_window);
          write_score_csv(dump_scores + "_" + forests[i].class_label + ".csv", track);
        }
      }
      if (detect_out.empty())
        std::cout << format_detections(detections);
      else
        write_detections(detect_out, detections);
      return 0;
    }

    if (evaluate->parsed()) {
      const auto ref = load_annotations(eval_ref);
      const auto hyp = load_annotations(eval_hyp);
      std::string csv = "scope,class,N,S,D,I,TP,FP,FN,ER,F1\n";
      if (eval_mode != "event") {
        const auto r = segment_metrics(ref, hyp, resolution);
        std::cout << format_report(r, "Segment-based metrics") << '\n';
        csv += report_csv(r, "segment");
      }
      if (eval_mode != "segment") {
        const auto r = event_metrics(ref, hyp, collar);
        std::cout << format_report(r, "Event-based metrics") << '\n';
        csv += report_csv(r, "event");
      }
      if (!eval_csv.empty()) {
        std::ofstream out(eval_csv, std::ios::binary);
        if (!out) throw Error("cannot write CSV report: " + eval_csv);
        out << csv;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
