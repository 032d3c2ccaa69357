#include "sedforest/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "sedforest/audio.hpp"
#include "sedforest/error.hpp"
#include "sedforest/model_io.hpp"
#include "sedforest/random.hpp"

namespace sedforest {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string read_text(const fs::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(std::string("cannot read ") + what + ": " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text, const char* what) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(std::string("cannot write ") + what + ": " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

void check_keys(const ordered_json& j, const ordered_json& allowed, const std::string& where) {
  if (!j.is_object()) throw Error("config: '" + where + "' must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.contains(key)) throw Error("config: unknown key '" + where + key + "'");
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Waveform crop(const Waveform& w, double onset, double offset) {
  const auto n = static_cast<long>(w.samples.size());
  const long a = std::clamp(static_cast<long>(std::lround(onset * w.sample_rate)), 0L, n);
  const long b = std::clamp(static_cast<long>(std::lround(offset * w.sample_rate)), a, n);
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(w.samples.begin() + a, w.samples.begin() + b);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifests

std::vector<ManifestEntry> Manifest::fold(const std::string& name) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.fold == name) out.push_back(e);
  return out;
}

fs::path Manifest::resolve(const fs::path& p) const { return p.is_absolute() ? p : root / p; }

Manifest load_manifest(const fs::path& path) {
  const std::string text = read_text(path, "manifest");
  Manifest m;
  m.root = path.parent_path();
  try {
    const auto doc = ordered_json::parse(text);
    for (const auto& e : doc.at("entries"))
      m.entries.push_back({e.at("audio").get<std::string>(), e.at("annotations").get<std::string>(),
                           e.at("fold").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw Error("manifest " + path.string() + ": " + e.what());
  }
  return m;
}

void save_manifest(const fs::path& path, const Manifest& manifest) {
  ordered_json entries = ordered_json::array();
  for (const auto& e : manifest.entries)
    entries.push_back({{"audio", e.audio.generic_string()},
                       {"annotations", e.annotations.generic_string()},
                       {"fold", e.fold}});
  write_text(path, ordered_json{{"entries", entries}}.dump(1) + "\n", "manifest");
}

std::vector<Clip> load_fold(const Manifest& manifest, const std::string& fold) {
  std::vector<Clip> out;
  for (const auto& e : manifest.fold(fold))
    out.push_back({load_audio(manifest.resolve(e.audio)), load_annotations(manifest.resolve(e.annotations))});
  return out;
}

fs::path write_benchmark(const SynthBenchmark& bench, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create output directory: " + dir.string());
  fs::create_directories(dir / "train");

  Manifest m;
  m.root = dir;
  std::map<std::string, int> counter;
  for (const auto& inst : bench.train) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%03d", inst.label.c_str(), counter[inst.label]++);
    const fs::path wav = fs::path("train") / (std::string(name) + ".wav");
    const fs::path ann = fs::path("train") / (std::string(name) + ".txt");
    write_wav(dir / wav, inst.audio);
    const EventAnnotation whole[] = {{0.0, inst.audio.duration(), inst.label}};
    write_annotations(dir / ann, whole);
    m.entries.push_back({wav, ann, "train"});
  }
  auto add_scene = [&](const Clip& clip, const std::string& name, const std::string& fold) {
    write_wav(dir / (name + ".wav"), clip.audio);
    write_annotations(dir / (name + ".txt"), clip.events);
    m.entries.push_back({name + ".wav", name + ".txt", fold});
  };
  for (std::size_t i = 0; i < bench.dev.size(); ++i) add_scene(bench.dev[i], "dev_" + std::to_string(i), "dev");
  add_scene(bench.test, "test", "test");
  const fs::path manifest = dir / "manifest.json";
  save_manifest(manifest, m);
  return manifest;
}

// ---------------------------------------------------------------------------
// Configuration

ordered_json to_json(const RunConfig& cfg) {
  ordered_json forest = to_json(cfg.forest);
  forest.erase("seed");  // per-class seeds come from the run seed
  return ordered_json{
      {"seed", cfg.seed},
      {"threads", cfg.threads},
      {"features", to_json(cfg.features)},
      {"forest", forest},
      {"detect",
       {{"alpha", cfg.detect.alpha},
        {"beta", cfg.detect.beta},
        {"smooth_window", cfg.detect.smooth_window},
        {"duration_factor", cfg.detect.duration_factor}}},
      {"train",
       {{"snr_levels", cfg.train.snr_levels},
        {"min_overlap_fraction", cfg.train.min_overlap_fraction},
        {"context_padding", cfg.train.context_padding}}},
      {"tune",
       {{"allow_ignorance", cfg.tune.allow_ignorance},
        {"ignorance_beta", cfg.tune.ignorance_beta},
        {"resolution", cfg.tune.resolution}}},
  };
}

RunConfig run_config_from_json(const ordered_json& j, RunConfig base) {
  const ordered_json ref = to_json(base);
  try {
    check_keys(j, ref, "");
    base.seed = j.value("seed", base.seed);
    base.threads = j.value("threads", base.threads);
    if (j.contains("features")) {
      check_keys(j["features"], ref["features"], "features.");
      base.features = feature_config_from_json(j["features"], base.features);
    }
    if (j.contains("forest")) {
      check_keys(j["forest"], ref["forest"], "forest.");
      base.forest = forest_config_from_json(j["forest"], base.forest);
    }
    if (j.contains("detect")) {
      const auto& d = j["detect"];
      check_keys(d, ref["detect"], "detect.");
      base.detect.alpha = d.value("alpha", base.detect.alpha);
      base.detect.beta = d.value("beta", base.detect.beta);
      base.detect.smooth_window = d.value("smooth_window", base.detect.smooth_window);
      base.detect.duration_factor = d.value("duration_factor", base.detect.duration_factor);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      check_keys(t, ref["train"], "train.");
      base.train.snr_levels = t.value("snr_levels", base.train.snr_levels);
      base.train.min_overlap_fraction = t.value("min_overlap_fraction", base.train.min_overlap_fraction);
      base.train.context_padding = t.value("context_padding", base.train.context_padding);
    }
    if (j.contains("tune")) {
      const auto& t = j["tune"];
      check_keys(t, ref["tune"], "tune.");
      base.tune.allow_ignorance = t.value("allow_ignorance", base.tune.allow_ignorance);
      base.tune.ignorance_beta = t.value("ignorance_beta", base.tune.ignorance_beta);
      base.tune.resolution = t.value("resolution", base.tune.resolution);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  base.tune.smooth_window = base.detect.smooth_window;
  base.tune.duration_factor = base.detect.duration_factor;
  return base;
}

RunConfig load_run_config(const fs::path& path, RunConfig base) {
  const std::string text = read_text(path, "config file");
  try {
    return run_config_from_json(ordered_json::parse(text), base);
  } catch (const nlohmann::json::exception& e) {
    throw Error("config " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Training

Waveform background_pool(std::span<const Clip> scenes) {
  Waveform pool;
  if (!scenes.empty()) pool.sample_rate = scenes.front().audio.sample_rate;
  for (const auto& scene : scenes) {
    if (scene.audio.sample_rate != pool.sample_rate) throw Error("background_pool: sample rates differ");
    const double rate = scene.audio.sample_rate;
    for (std::size_t i = 0; i < scene.audio.samples.size(); ++i) {
      const double t = static_cast<double>(i) / rate;
      const bool inside = std::any_of(scene.events.begin(), scene.events.end(),
                                      [t](const auto& e) { return t >= e.onset && t < e.offset; });
      if (!inside) pool.samples.push_back(scene.audio.samples[i]);
    }
  }
  return pool;
}

Clip embed_in_background(const Clip& clip, const Waveform& pool, double padding, std::uint64_t seed) {
  if (pool.sample_rate != clip.audio.sample_rate) throw Error("embed_in_background: sample rates differ");
  const auto pad = static_cast<std::size_t>(std::lround(padding * pool.sample_rate));
  const std::size_t len = clip.audio.samples.size() + 2 * pad;
  if (pool.samples.size() < len)
    throw Error("embed_in_background: background pool shorter than a padded training clip");
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.samples.size() - len);
  const std::size_t start = pick(rng);

  Clip out;
  out.audio.sample_rate = pool.sample_rate;
  out.audio.samples.assign(pool.samples.begin() + static_cast<long>(start),
                           pool.samples.begin() + static_cast<long>(start + len));
  for (std::size_t i = 0; i < clip.audio.samples.size(); ++i) out.audio.samples[pad + i] += clip.audio.samples[i];
  const double shift = static_cast<double>(pad) / pool.sample_rate;
  for (const auto& e : clip.events) out.events.push_back({e.onset + shift, e.offset + shift, e.label});
  return out;
}

TrainingCorpus build_corpus(std::span<const Clip> train, std::span<const Clip> held_out,
                            std::span<const FeatureMatrix> held_out_features, const RunConfig& cfg) {
  if (train.empty()) throw Error("no training clips");
  if (held_out.size() != held_out_features.size())
    throw Error("build_corpus: one feature matrix per held-out scene required");
  cfg.features.validate();

  TrainingCorpus corpus;
  std::set<std::string> classes;
  std::vector<LabeledWaveform> instances;
  std::vector<Clip> raw;
  for (const auto& clip : train) {
    Waveform audio = resample(clip.audio, cfg.features.sample_rate);
    for (const auto& e : clip.events) {
      classes.insert(e.label);
      auto& longest = corpus.max_event_duration[e.label];
      longest = std::max(longest, e.duration());
    }
    if (clip.events.size() == 1)
      instances.push_back({crop(audio, clip.events[0].onset, clip.events[0].offset), clip.events[0].label});
    else
      raw.push_back({std::move(audio), clip.events});
  }
  corpus.classes.assign(classes.begin(), classes.end());

  std::vector<Clip> scenes;
  for (const auto& s : held_out) scenes.push_back({resample(s.audio, cfg.features.sample_rate), s.events});
  const Waveform pool = background_pool(scenes);
  const double bg_rms = rms(pool.samples);
  if (!(bg_rms > 0.0)) throw Error("held-out scenes contain no background audio");

  auto mixed = build_training_clips(instances, bg_rms, cfg.train.snr_levels, cfg.train.min_overlap_fraction,
                                    derive_seed(cfg.seed, {10}));
  raw.insert(raw.end(), std::make_move_iterator(mixed.begin()), std::make_move_iterator(mixed.end()));

  corpus.clips.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    corpus.clips.push_back(
        embed_in_background(raw[i], pool, cfg.train.context_padding, derive_seed(cfg.seed, {11, i})));
  corpus.features.reserve(corpus.clips.size());
  for (const auto& c : corpus.clips) corpus.features.push_back(gammatone_cepstra(c.audio, cfg.features));

  for (std::size_t i = 0; i < held_out.size(); ++i) {
    const FeatureMatrix bg = background_rows(held_out_features[i], held_out[i].events);
    if (corpus.background.rows() == 0 && corpus.background.dim() == 0)
      corpus.background = FeatureMatrix(bg.dim(), bg.hop_len(), bg.window_len());
    for (std::size_t m = 0; m < bg.rows(); ++m) corpus.background.append_row(bg.row(m), bg.segment_time(m));
  }
  return corpus;
}

std::vector<Segment> class_training_set(const TrainingCorpus& corpus, const std::string& label,
                                        std::uint64_t seed) {
  std::vector<Segment> set;
  for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
    auto part = label_segments(corpus.features[i], corpus.clips[i].events, label);
    set.insert(set.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return inject_background_segments(std::move(set), corpus.background, seed);
}

void fit_normalization(Forest& forest, std::span<const FeatureMatrix> held_out, int smooth_window) {
  double zp = 0.0;
  double zm = 0.0;
  for (const auto& f : held_out) {
    const ScoreTrack raw = smooth(accumulate(f, forest, 0.0, false), smooth_window);
    for (double v : raw.onset) zp = std::max(zp, v);
    for (double v : raw.offset) zm = std::max(zm, v);
  }
  forest.z_plus = zp > 0.0 ? zp : 1.0;
  forest.z_minus = zm > 0.0 ? zm : 1.0;
}

std::uint64_t class_seed(std::uint64_t run_seed, const std::string& label) {
  return derive_seed(run_seed, {fnv1a(label)});
}

Forest train_class(const TrainingCorpus& corpus, const std::string& label,
                   std::span<const FeatureMatrix> held_out, const RunConfig& cfg) {
  if (std::find(corpus.classes.begin(), corpus.classes.end(), label) == corpus.classes.end())
    throw Error("class '" + label + "' has no training instances");
  ForestConfig fc = cfg.forest;
  fc.seed = class_seed(cfg.seed, label);
  const auto set = class_training_set(corpus, label, derive_seed(fc.seed, {0xb6}));
  Forest forest = train_forest(set, fc, {label, cfg.features, cfg.features.hop_len}, cfg.threads);
  forest.max_train_event_duration = corpus.max_event_duration.at(label);
  fit_normalization(forest, held_out, cfg.detect.smooth_window);
  return forest;
}

// ---------------------------------------------------------------------------
// Thresholds

std::string serialize_thresholds(const Thresholds& t) {
  ordered_json classes = ordered_json::object();
  for (const auto& [label, r] : t)
    classes[label] = {{"alpha", r.alpha},
                      {"beta", r.beta},
                      {"ignored", r.ignored},
                      {"errors", r.errors},
                      {"reference_count", r.reference_count},
                      {"evaluated", r.evaluated}};
  return ordered_json{{"format_version", 1}, {"classes", classes}}.dump(1) + "\n";
}

Thresholds parse_thresholds(const std::string& text) {
  Thresholds out;
  try {
    const auto doc = ordered_json::parse(text);
    if (doc.at("format_version").get<int>() != 1) throw Error("thresholds: unsupported format_version");
    for (const auto& [label, j] : doc.at("classes").items()) {
      TuneResult r;
      r.label = label;
      r.alpha = j.at("alpha").get<double>();
      r.beta = j.at("beta").get<double>();
      r.ignored = j.value("ignored", false);
      r.errors = j.value("errors", std::size_t{0});
      r.reference_count = j.value("reference_count", std::size_t{0});
      r.evaluated = j.value("evaluated", std::size_t{0});
      out[label] = r;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("thresholds: malformed document: ") + e.what());
  }
  return out;
}

void save_thresholds(const fs::path& path, const Thresholds& t) {
  write_text(path, serialize_thresholds(t), "thresholds file");
}

Thresholds load_thresholds(const fs::path& path) {
  try {
    return parse_thresholds(read_text(path, "thresholds file"));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

std::vector<DetectConfig> detect_configs(std::span<const Forest> forests, const Thresholds& t,
                                         const DetectConfig& base) {
  std::vector<DetectConfig> out;
  for (const auto& f : forests) {
    DetectConfig c = base;
    if (const auto it = t.find(f.class_label); it != t.end()) {
      c.alpha = it->second.alpha;
      c.beta = it->second.beta;
    }
    out.push_back(c);
  }
  return out;
}

std::vector<DevStream> make_dev_streams(std::span<const Clip> scenes, const FeatureConfig& features) {
  std::vector<DevStream> out;
  for (const auto& s : scenes) out.push_back({gammatone_cepstra(s.audio, features), s.events});
  return out;
}

}  // namespace sedforest
