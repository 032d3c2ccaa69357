#include <algorithm>
#include <cmath>
#include <numbers>

#include "sedforest/dataset.hpp"
#include "sedforest/error.hpp"
#include "sedforest/random.hpp"

namespace sedforest {

namespace {

struct PlannedEvent {
  int cls = 0;
  double duration = 0.0;
  std::uint64_t seed = 0;
};

struct Group {
  std::vector<PlannedEvent> events;
  std::vector<double> offsets;  // relative to group start
  double length() const {
    double len = 0.0;
    for (std::size_t i = 0; i < events.size(); ++i)
      len = std::max(len, offsets[i] + events[i].duration);
    return len;
  }
};

}  // namespace

std::string synth_class_name(int k) { return "class" + std::to_string(k); }

double synth_class_frequency(int k) { return 300.0 * std::pow(2.0, k); }

double synth_max_frequency(int k, double max_duration) {
  return kSynthPartialRatio * synth_class_frequency(k) * 1.01 * std::exp2(kSynthGlide * max_duration);
}

Waveform synth_event(int k, double duration, std::uint64_t seed, int sample_rate) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double freq = synth_class_frequency(k) * (0.99 + 0.02 * unit(rng));
  const double am_rate = 3.0 + 2.0 * k;
  const double am_phase = 2.0 * std::numbers::pi * unit(rng);
  const double tone_phase = 2.0 * std::numbers::pi * unit(rng);
  constexpr double kAttack = 0.03;
  constexpr double kRelease = 0.05;
  const double rate = kSynthGlide * std::numbers::ln2;  // d/dt of ln f
  const double partial_end = kSynthPartialRatio * freq * std::exp2(kSynthGlide * duration);

  Waveform w;
  w.sample_rate = sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(duration * sample_rate));
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    double env = 0.6 + 0.4 * std::exp(-3.0 * t / duration);
    if (t < kAttack) env *= 0.5 - 0.5 * std::cos(std::numbers::pi * t / kAttack);
    if (duration - t < kRelease) env *= 0.5 - 0.5 * std::cos(std::numbers::pi * (duration - t) / kRelease);
    const double am = 1.0 + 0.5 * std::sin(2.0 * std::numbers::pi * am_rate * t + am_phase);
    // fundamental rises from freq; the partial falls towards kSynthPartialRatio * freq at the end
    const double up = 2.0 * std::numbers::pi * freq * std::expm1(rate * t) / rate;
    const double down = 2.0 * std::numbers::pi * partial_end * -std::expm1(-rate * t) / rate;
    w.samples[i] = env * am * (std::sin(up + tone_phase) + 0.5 * std::sin(down));
  }
  return w;
}

Waveform pink_noise(double duration, double target_rms, std::uint64_t seed, int sample_rate) {
  Rng rng(seed);
  std::normal_distribution<double> white(0.0, 1.0);
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(static_cast<std::size_t>(std::llround(duration * sample_rate)));
  double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
  for (double& s : w.samples) {
    const double x = white(rng);
    b0 = 0.99886 * b0 + x * 0.0555179;
    b1 = 0.99332 * b1 + x * 0.0750759;
    b2 = 0.96900 * b2 + x * 0.1538520;
    b3 = 0.86650 * b3 + x * 0.3104856;
    b4 = 0.55000 * b4 + x * 0.5329522;
    b5 = -0.7616 * b5 - x * 0.0168980;
    s = b0 + b1 + b2 + b3 + b4 + b5 + b6 + x * 0.5362;
    b6 = x * 0.115926;
  }
  const double r = rms(w.samples);
  if (r > 0.0)
    for (double& s : w.samples) s *= target_rms / r;
  return w;
}

Clip synth_scene(const SynthConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dur(cfg.min_event_len, cfg.max_event_len);

  std::vector<std::vector<PlannedEvent>> pending(static_cast<std::size_t>(cfg.n_classes));
  for (int k = 0; k < cfg.n_classes; ++k)
    for (int i = 0; i < cfg.instances_per_class; ++i)
      pending[static_cast<std::size_t>(k)].push_back({k, dur(rng), rng()});

  const int total = cfg.n_classes * cfg.instances_per_class;
  std::vector<Group> groups;
  // pair the two fullest classes until a third of the events are paired
  for (int p = 0; p < total / 3; ++p) {
    std::vector<std::size_t> order(pending.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return pending[a].size() > pending[b].size(); });
    if (pending[order[1]].empty()) break;
    Group g;
    g.events = {pending[order[0]].back(), pending[order[1]].back()};
    pending[order[0]].pop_back();
    pending[order[1]].pop_back();
    std::uniform_real_distribution<double> lag(0.2, 0.5);
    g.offsets = {0.0, lag(rng) * g.events[0].duration};
    groups.push_back(std::move(g));
  }
  for (auto& cls : pending)
    for (const auto& ev : cls) groups.push_back({{ev}, {0.0}});
  std::shuffle(groups.begin(), groups.end(), rng);

  constexpr double kMargin = 0.2;
  const double slot = cfg.scene_len / static_cast<double>(std::max<std::size_t>(groups.size(), 1));
  for (const auto& g : groups)
    if (g.length() + 2.0 * kMargin > slot)
      throw Error("synth_scene: scene_len " + std::to_string(cfg.scene_len) + " s too short for " +
                  std::to_string(groups.size()) + " event groups");

  Clip scene;
  scene.audio = pink_noise(cfg.scene_len, cfg.background_rms, rng(), cfg.sample_rate);
  const double bg_rms = rms(scene.audio.samples);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    std::uniform_real_distribution<double> jitter(kMargin, slot - g.length() - kMargin);
    const double start = static_cast<double>(gi) * slot + jitter(rng);
    for (std::size_t e = 0; e < g.events.size(); ++e) {
      const auto& ev = g.events[e];
      Waveform w = synth_event(ev.cls, ev.duration, ev.seed, cfg.sample_rate);
      const double gain = snr_gain(rms(w.samples), bg_rms, cfg.snr_db);
      const auto at = static_cast<std::size_t>(std::llround((start + g.offsets[e]) * cfg.sample_rate));
      for (std::size_t i = 0; i < w.samples.size() && at + i < scene.audio.samples.size(); ++i)
        scene.audio.samples[at + i] += gain * w.samples[i];
      scene.events.push_back({static_cast<double>(at) / cfg.sample_rate,
                              static_cast<double>(at + w.samples.size()) / cfg.sample_rate,
                              synth_class_name(ev.cls)});
    }
  }
  std::stable_sort(scene.events.begin(), scene.events.end(),
                   [](const auto& l, const auto& r) { return l.onset < r.onset; });
  return scene;
}

SynthBenchmark synth_benchmark(const SynthConfig& cfg) {
  if (cfg.n_classes < 2) throw Error("synth_benchmark: need at least 2 classes");
  if (synth_max_frequency(cfg.n_classes - 1, cfg.max_event_len) >= cfg.sample_rate / 2.0)
    throw Error("synth_benchmark: too many classes for the sample rate");
  if (cfg.instances_per_class < 1) throw Error("synth_benchmark: need at least one instance per class");
  if (cfg.dev_scenes < 0) throw Error("synth_benchmark: dev_scenes must be nonnegative");
  if (!(cfg.min_event_len > 0.0 && cfg.min_event_len <= cfg.max_event_len))
    throw Error("synth_benchmark: invalid event length range");

  SynthBenchmark out;
  for (int k = 0; k < cfg.n_classes; ++k) out.classes.push_back(synth_class_name(k));

  Rng rng(derive_seed(cfg.seed, {0}));
  std::uniform_real_distribution<double> dur(cfg.min_event_len, cfg.max_event_len);
  for (int k = 0; k < cfg.n_classes; ++k)
    for (int i = 0; i < cfg.instances_per_class; ++i) {
      const double d = dur(rng);
      out.train.push_back({synth_event(k, d, rng(), cfg.sample_rate), synth_class_name(k)});
    }
  for (int i = 0; i < cfg.dev_scenes; ++i)
    out.dev.push_back(synth_scene(cfg, derive_seed(cfg.seed, {1, static_cast<std::uint64_t>(i)})));
  out.test = synth_scene(cfg, derive_seed(cfg.seed, {2}));
  return out;
}

}  // namespace sedforest
