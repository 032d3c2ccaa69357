#include "sedforest/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "sedforest/error.hpp"
#include "sedforest/random.hpp"

namespace sedforest {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

bool parse_seconds(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace

std::vector<EventAnnotation> parse_annotations(std::string_view text) {
  std::vector<EventAnnotation> events;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;

    const char sep = line.find('\t') != std::string_view::npos ? '\t' : ',';
    const auto a = line.find(sep);
    const auto b = a == std::string_view::npos ? a : line.find(sep, a + 1);
    if (b == std::string_view::npos)
      throw Error("annotation line " + std::to_string(line_no) + ": expected onset, offset, label");

    EventAnnotation ev;
    if (!parse_seconds(line.substr(0, a), ev.onset) ||
        !parse_seconds(line.substr(a + 1, b - a - 1), ev.offset))
      throw Error("annotation line " + std::to_string(line_no) + ": malformed time value");
    ev.label = std::string(trim(line.substr(b + 1)));
    if (ev.label.empty()) throw Error("annotation line " + std::to_string(line_no) + ": empty label");
    if (ev.onset < 0.0) throw Error("annotation line " + std::to_string(line_no) + ": negative onset");
    if (!(ev.onset < ev.offset))
      throw Error("annotation line " + std::to_string(line_no) + ": onset must precede offset");
    events.push_back(std::move(ev));
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const auto& l, const auto& r) { return l.onset < r.onset; });
  return events;
}

std::vector<EventAnnotation> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read annotation file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_annotations(ss.str());
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

std::string format_annotations(std::span<const EventAnnotation> events) {
  std::string out;
  char buf[64];
  for (const auto& ev : events) {
    std::snprintf(buf, sizeof buf, "%.3f\t%.3f\t", ev.onset, ev.offset);
    out += buf;
    out += ev.label;
    out += '\n';
  }
  return out;
}

void write_annotations(const std::filesystem::path& path, std::span<const EventAnnotation> events) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write annotation file: " + path.string());
  out << format_annotations(events);
}

std::optional<std::pair<std::size_t, std::size_t>> event_segment_span(const FeatureMatrix& features,
                                                                      const EventAnnotation& event) {
  const std::size_t n = features.rows();
  std::size_t first = 0;
  while (first < n && features.segment_center(first) < event.onset) ++first;
  if (first == n || !(features.segment_center(first) < event.offset)) return std::nullopt;
  std::size_t last = first;
  while (last + 1 < n && features.segment_center(last + 1) < event.offset) ++last;
  return std::pair{first, last};
}

std::vector<Segment> label_segments(const FeatureMatrix& features,
                                    std::span<const EventAnnotation> annotations,
                                    std::string_view target_class) {
  std::vector<Segment> out(features.rows());
  for (std::size_t m = 0; m < out.size(); ++m) {
    const auto row = features.row(m);
    out[m].x.assign(row.begin(), row.end());
    out[m].index = m;
  }
  for (const auto& ev : annotations) {
    if (ev.label != target_class) continue;
    const auto span = event_segment_span(features, ev);
    if (!span) continue;
    const auto [first, last] = *span;
    for (std::size_t m = first; m <= last; ++m) {
      if (out[m].positive) continue;  // earlier event of the same class keeps the segment
      out[m].positive = true;
      out[m].d = DistanceVector{static_cast<double>(m - first), static_cast<double>(last - m)};
    }
  }
  return out;
}

double snr_gain(double event_rms, double background_rms, double snr_db) {
  if (!(event_rms > 0.0)) throw Error("scale_to_snr: event is silent");
  if (!(background_rms > 0.0)) throw Error("scale_to_snr: background is silent");
  return std::pow(10.0, snr_db / 20.0) * background_rms / event_rms;
}

Waveform scale_to_snr(const Waveform& event, const Waveform& background, double snr_db) {
  const double gain = snr_gain(rms(event.samples), rms(background.samples), snr_db);
  Waveform out = event;
  for (double& s : out.samples) s *= gain;
  return out;
}

Clip mix_overlap(const LabeledWaveform& anchor, std::span<const LabeledWaveform> negatives,
                 const MixtureSpec& spec) {
  if (!(spec.min_overlap_fraction > 0.0 && spec.min_overlap_fraction <= 1.0))
    throw Error("mix_overlap: min_overlap_fraction must lie in (0, 1]");
  const int rate = anchor.audio.sample_rate;
  const auto anchor_len = static_cast<long>(anchor.audio.samples.size());
  if (anchor_len == 0) throw Error("mix_overlap: empty anchor event");
  const auto need = static_cast<long>(std::ceil(spec.min_overlap_fraction * anchor_len - 1e-9));

  Rng rng(spec.rng_seed);
  std::vector<long> starts;
  long lo = 0;
  long hi = anchor_len;
  for (const auto& neg : negatives) {
    if (neg.audio.sample_rate != rate) throw Error("mix_overlap: sample rates differ");
    const auto len = static_cast<long>(neg.audio.samples.size());
    if (len < need)
      throw Error("mix_overlap: negative '" + neg.label + "' (" + std::to_string(len) +
                  " samples) cannot cover the required overlap of " + std::to_string(need) +
                  " samples");
    std::uniform_int_distribution<long> pick(need - len, anchor_len - need);
    const long s = pick(rng);
    starts.push_back(s);
    lo = std::min(lo, s);
    hi = std::max(hi, s + len);
  }

  Clip clip;
  clip.audio.sample_rate = rate;
  clip.audio.samples.assign(static_cast<std::size_t>(hi - lo), 0.0);
  auto add = [&](const LabeledWaveform& w, long start) {
    const long at = start - lo;
    for (std::size_t i = 0; i < w.audio.samples.size(); ++i)
      clip.audio.samples[static_cast<std::size_t>(at) + i] += w.audio.samples[i];
    clip.events.push_back({static_cast<double>(at) / rate,
                           static_cast<double>(at + static_cast<long>(w.audio.samples.size())) / rate,
                           w.label});
  };
  add(anchor, 0);
  for (std::size_t i = 0; i < negatives.size(); ++i) add(negatives[i], starts[i]);
  std::stable_sort(clip.events.begin(), clip.events.end(),
                   [](const auto& l, const auto& r) { return l.onset < r.onset; });
  return clip;
}

FeatureMatrix background_rows(const FeatureMatrix& features, std::span<const EventAnnotation> events) {
  FeatureMatrix out(features.dim(), features.hop_len(), features.window_len());
  for (std::size_t m = 0; m < features.rows(); ++m) {
    const double c = features.segment_center(m);
    const bool inside = std::any_of(events.begin(), events.end(),
                                    [c](const auto& ev) { return c >= ev.onset && c < ev.offset; });
    if (!inside) out.append_row(features.row(m), features.segment_time(m));
  }
  return out;
}

std::vector<Segment> inject_background_segments(std::vector<Segment> train,
                                                const FeatureMatrix& background,
                                                std::uint64_t rng_seed) {
  if (background.empty()) throw Error("inject_background_segments: background has no segments");
  const auto n_pos = static_cast<std::size_t>(
      std::count_if(train.begin(), train.end(), [](const Segment& s) { return s.positive; }));
  if (n_pos == 0) return train;

  Rng rng(rng_seed);
  const std::size_t rows = background.rows();
  std::vector<std::size_t> picks;
  if (n_pos <= rows) {
    std::vector<std::size_t> pool(rows);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < n_pos; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, rows - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    picks.assign(pool.begin(), pool.begin() + static_cast<long>(n_pos));
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, rows - 1);
    for (std::size_t i = 0; i < n_pos; ++i) picks.push_back(pick(rng));
  }
  train.reserve(train.size() + n_pos);
  for (std::size_t r : picks) {
    Segment s;
    const auto row = background.row(r);
    s.x.assign(row.begin(), row.end());
    s.index = r;
    train.push_back(std::move(s));
  }
  return train;
}

std::vector<Clip> build_training_clips(std::span<const LabeledWaveform> instances,
                                       double background_rms, std::span<const double> snr_levels,
                                       double min_overlap_fraction, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < instances.size(); ++i) by_class[instances[i].label].push_back(i);

  std::vector<Clip> clips;
  Rng rng(seed);
  for (double snr : snr_levels) {
    std::vector<LabeledWaveform> scaled(instances.begin(), instances.end());
    for (auto& inst : scaled) {
      const double gain = snr_gain(rms(inst.audio.samples), background_rms, snr);
      for (double& s : inst.audio.samples) s *= gain;
    }

    for (const auto& inst : scaled)
      clips.push_back({inst.audio, {{0.0, inst.audio.duration(), inst.label}}});

    auto pick_from = [&](const std::vector<std::size_t>& pool, std::size_t need_samples)
        -> std::optional<std::size_t> {
      std::vector<std::size_t> ok;
      for (std::size_t j : pool)
        if (scaled[j].audio.samples.size() >= need_samples) ok.push_back(j);
      if (ok.empty()) return std::nullopt;
      std::uniform_int_distribution<std::size_t> pick(0, ok.size() - 1);
      return ok[pick(rng)];
    };

    for (std::size_t i = 0; i < scaled.size(); ++i) {
      const auto need = static_cast<std::size_t>(
          std::ceil(min_overlap_fraction * scaled[i].audio.samples.size() - 1e-9));

      // anchor overlapped by one instance of every other class
      std::vector<LabeledWaveform> negs;
      std::vector<std::string> other_classes;
      for (const auto& [label, pool] : by_class) {
        if (label == scaled[i].label) continue;
        other_classes.push_back(label);
        if (auto j = pick_from(pool, need)) negs.push_back(scaled[*j]);
      }
      if (!negs.empty())
        clips.push_back(mix_overlap(scaled[i], negs, {snr, min_overlap_fraction, rng()}));

      // anchor with a single instance of another class
      if (!other_classes.empty()) {
        std::uniform_int_distribution<std::size_t> which(0, other_classes.size() - 1);
        const auto& label = other_classes[which(rng)];
        if (auto j = pick_from(by_class[label], need)) {
          const LabeledWaveform pair[] = {scaled[*j]};
          clips.push_back(mix_overlap(scaled[i], pair, {snr, min_overlap_fraction, rng()}));
        }
      }
    }
  }
  return clips;
}

std::size_t count_overlapping_pairs(std::span<const EventAnnotation> events) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < events.size(); ++i)
    for (std::size_t j = i + 1; j < events.size(); ++j)
      if (std::min(events[i].offset, events[j].offset) > std::max(events[i].onset, events[j].onset))
        ++n;
  return n;
}

}  // namespace sedforest
