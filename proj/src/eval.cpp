#include "sedforest/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "sedforest/error.hpp"

namespace sedforest {

namespace {

std::size_t cell_count(std::span<const EventAnnotation> a, std::span<const EventAnnotation> b,
                       double resolution) {
  double end = 0.0;
  for (const auto& e : a) end = std::max(end, e.offset);
  for (const auto& e : b) end = std::max(end, e.offset);
  return static_cast<std::size_t>(std::ceil(end / resolution));
}

// active[label][cell]
std::map<std::string, std::vector<char>> activity(std::span<const EventAnnotation> events,
                                                  std::size_t cells, double resolution) {
  std::map<std::string, std::vector<char>> out;
  for (const auto& e : events) {
    auto& row = out.try_emplace(e.label, std::vector<char>(cells, 0)).first->second;
    // cell k covers [k*res, (k+1)*res); activity needs positive overlap
    const auto first = static_cast<std::size_t>(std::floor(e.onset / resolution));
    for (std::size_t k = first; k < cells; ++k) {
      const double lo = static_cast<double>(k) * resolution;
      if (lo >= e.offset) break;
      const double hi = lo + resolution;
      if (std::min(hi, e.offset) > std::max(lo, e.onset)) row[k] = 1;
    }
  }
  return out;
}

std::string fmt_optional(const std::optional<double>& v, int decimals, double scale = 1.0) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, *v * scale);
  return buf;
}

}  // namespace

std::optional<double> ErrorCounts::error_rate() const {
  if (N == 0) return std::nullopt;
  return static_cast<double>(errors()) / static_cast<double>(N);
}

std::optional<double> ErrorCounts::f1() const {
  const std::size_t denom = 2 * TP + FP + FN;
  if (denom == 0) return std::nullopt;
  return 2.0 * static_cast<double>(TP) / static_cast<double>(denom);
}

ErrorCounts& ErrorCounts::operator+=(const ErrorCounts& o) {
  N += o.N;
  S += o.S;
  D += o.D;
  I += o.I;
  TP += o.TP;
  FP += o.FP;
  FN += o.FN;
  return *this;
}

MetricReport segment_metrics(std::span<const EventAnnotation> ref, std::span<const EventAnnotation> hyp,
                             double resolution) {
  if (!(resolution > 0.0)) throw Error("segment_metrics: resolution must be positive");
  const std::size_t cells = cell_count(ref, hyp, resolution);
  const auto ref_active = activity(ref, cells, resolution);
  const auto hyp_active = activity(hyp, cells, resolution);

  std::set<std::string> labels;
  for (const auto& [l, _] : ref_active) labels.insert(l);
  for (const auto& [l, _] : hyp_active) labels.insert(l);

  MetricReport report;
  const std::vector<char> idle(cells, 0);
  for (const auto& l : labels) report.per_class[l] = {};
  for (std::size_t k = 0; k < cells; ++k) {
    std::size_t tp = 0, fp = 0, fn = 0, n = 0;
    for (const auto& l : labels) {
      const auto r_it = ref_active.find(l);
      const auto h_it = hyp_active.find(l);
      const bool r = (r_it == ref_active.end() ? idle : r_it->second)[k];
      const bool h = (h_it == hyp_active.end() ? idle : h_it->second)[k];
      ErrorCounts& c = report.per_class[l];
      c.N += r;
      c.TP += r && h;
      c.FN += r && !h;
      c.FP += h && !r;
      c.D += r && !h;
      c.I += h && !r;
      n += r;
      tp += r && h;
      fn += r && !h;
      fp += h && !r;
    }
    ErrorCounts& o = report.overall;
    const std::size_t s = std::min(fn, fp);
    o.N += n;
    o.TP += tp;
    o.FP += fp;
    o.FN += fn;
    o.S += s;
    o.D += fn - s;
    o.I += fp - s;
  }
  return report;
}

MetricReport event_metrics(std::span<const EventAnnotation> ref, std::span<const EventAnnotation> hyp,
                           double collar) {
  auto by_onset = [](std::span<const EventAnnotation> in) {
    std::vector<EventAnnotation> v(in.begin(), in.end());
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.onset < b.onset; });
    return v;
  };
  const auto r = by_onset(ref);
  const auto h = by_onset(hyp);
  std::vector<char> r_used(r.size(), 0), h_used(h.size(), 0);

  MetricReport report;
  for (const auto& e : r) report.per_class[e.label].N += 1;
  for (const auto& e : h) report.per_class.try_emplace(e.label);

  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < h.size(); ++j) {
      if (h_used[j] || h[j].label != r[i].label) continue;
      if (std::abs(h[j].onset - r[i].onset) <= collar) {
        r_used[i] = h_used[j] = 1;
        report.per_class[r[i].label].TP += 1;
        break;
      }
    }
  std::size_t tp = 0;
  for (auto& [label, c] : report.per_class) {
    const auto sys = static_cast<std::size_t>(
        std::count_if(h.begin(), h.end(), [&](const auto& e) { return e.label == label; }));
    c.FN = c.N - c.TP;
    c.FP = sys - c.TP;
    c.D = c.FN;
    c.I = c.FP;
    tp += c.TP;
  }

  std::size_t subs = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r_used[i]) continue;
    for (std::size_t j = 0; j < h.size(); ++j) {
      if (h_used[j] || h[j].label == r[i].label) continue;
      if (std::abs(h[j].onset - r[i].onset) <= collar) {
        r_used[i] = h_used[j] = 1;
        ++subs;
        break;
      }
    }
  }
  ErrorCounts& o = report.overall;
  o.N = r.size();
  o.TP = tp;
  o.FN = r.size() - tp;
  o.FP = h.size() - tp;
  o.S = subs;
  o.D = o.FN - subs;
  o.I = o.FP - subs;
  return report;
}

std::vector<EventAnnotation> to_annotations(std::span<const Detection> detections) {
  std::vector<EventAnnotation> out;
  out.reserve(detections.size());
  for (const auto& d : detections) out.push_back({d.onset, d.offset, d.label});
  return out;
}

std::string format_report(const MetricReport& report, const std::string& title) {
  std::ostringstream os;
  char line[160];
  os << title << '\n';
  std::snprintf(line, sizeof line, "%-24s %6s %6s %6s %6s %8s %7s\n", "Event type", "N", "S", "D", "I",
                "ER", "F1(%)");
  os << line;
  auto row = [&](const std::string& name, const ErrorCounts& c) {
    std::snprintf(line, sizeof line, "%-24s %6zu %6zu %6zu %6zu %8s %7s\n", name.c_str(), c.N, c.S, c.D,
                  c.I, fmt_optional(c.error_rate(), 4).c_str(), fmt_optional(c.f1(), 1, 100.0).c_str());
    os << line;
  };
  for (const auto& [label, c] : report.per_class) row(label, c);
  row("Overall", report.overall);
  return os.str();
}

std::string report_csv(const MetricReport& report, const std::string& scope) {
  std::ostringstream os;
  auto row = [&](const std::string& name, const ErrorCounts& c) {
    os << scope << ',' << name << ',' << c.N << ',' << c.S << ',' << c.D << ',' << c.I << ',' << c.TP
       << ',' << c.FP << ',' << c.FN << ',' << fmt_optional(c.error_rate(), 6) << ','
       << fmt_optional(c.f1(), 6) << '\n';
  };
  for (const auto& [label, c] : report.per_class) row(label, c);
  row("overall", report.overall);
  return os.str();
}

ThresholdGrid ThresholdGrid::standard() {
  ThresholdGrid g;
  for (int i = 0; i <= 20; ++i) g.alphas.push_back(i / 20.0);
  for (int j = 0; j <= 40; ++j) g.betas.push_back(j / 40.0);
  return g;
}

std::optional<double> TuneResult::error_rate() const {
  if (reference_count == 0) return std::nullopt;
  return static_cast<double>(errors) / static_cast<double>(reference_count);
}

std::vector<Detection> detect_with(const DevStream& stream, const Forest& forest, double alpha,
                                   double beta, const TuneOptions& options) {
  DetectConfig cfg;
  cfg.alpha = alpha;
  cfg.beta = beta;
  cfg.smooth_window = options.smooth_window;
  cfg.duration_factor = options.duration_factor;
  return detect_class(stream.features, forest, cfg);
}

ErrorCounts class_segment_counts(std::span<const EventAnnotation> ref, std::span<const Detection> hyp,
                                 const std::string& label, double resolution) {
  std::vector<EventAnnotation> r;
  for (const auto& e : ref)
    if (e.label == label) r.push_back(e);
  std::vector<EventAnnotation> h;
  for (const auto& d : hyp)
    if (d.label == label) h.push_back({d.onset, d.offset, d.label});
  const auto report = segment_metrics(r, h, resolution);
  return report.overall;
}

TuneResult tune_thresholds(std::span<const DevStream> streams, const Forest& forest,
                           const ThresholdGrid& grid, const TuneOptions& options) {
  if (streams.empty()) throw Error("tune_thresholds: no development streams");
  if (grid.alphas.empty() || grid.betas.empty()) throw Error("tune_thresholds: empty grid");
  const std::string& label = forest.class_label;

  std::vector<LeafAssignments> leaves;
  for (const auto& s : streams) leaves.push_back(assign_leaves(s.features, forest));

  TuneResult best;
  best.label = label;
  bool have = false;
  auto consider = [&](double alpha, double beta, const ErrorCounts& c, bool ignored) {
    ++best.evaluated;
    const bool better = !have || c.errors() < best.errors ||
                        (c.errors() == best.errors &&
                         (beta > best.beta || (beta == best.beta && alpha > best.alpha)));
    if (better) {
      have = true;
      best.alpha = alpha;
      best.beta = beta;
      best.errors = c.errors();
      best.reference_count = c.N;
      best.ignored = ignored;
    }
  };

  for (double alpha : grid.alphas) {
    std::vector<ScoreTrack> tracks;
    for (const auto& l : leaves)
      tracks.push_back(smooth(accumulate(l, forest, alpha), options.smooth_window));
    for (double beta : grid.betas) {
      ErrorCounts pooled;
      for (std::size_t s = 0; s < streams.size(); ++s) {
        const auto& f = streams[s].features;
        auto events = extract_events(tracks[s], beta, f.hop_len(), 0.5 * f.window_len(), label);
        if (forest.max_train_event_duration > 0.0)
          events = filter_duration(std::move(events), forest.max_train_event_duration,
                                   options.duration_factor);
        pooled += class_segment_counts(streams[s].references, events, label, options.resolution);
      }
      consider(alpha, beta, pooled, false);
    }
  }

  if (options.allow_ignorance) {
    ErrorCounts pooled;
    for (const auto& s : streams) pooled += class_segment_counts(s.references, {}, label, options.resolution);
    consider(*std::max_element(grid.alphas.begin(), grid.alphas.end()), options.ignorance_beta, pooled, true);
  }
  return best;
}

}  // namespace sedforest
