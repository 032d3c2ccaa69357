#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "sedforest/error.hpp"
#include "sedforest/eval.hpp"
#include "test_util.hpp"

using namespace sedforest;
using Catch::Approx;

namespace {

using Events = std::vector<EventAnnotation>;

// Cells [k r, (k+1) r) with positive overlap, for one label.
std::set<long> active_cells(const Events& ev, const std::string& label, double r) {
  std::set<long> cells;
  for (const auto& e : ev) {
    if (e.label != label) continue;
    for (long k = static_cast<long>(std::floor(e.onset / r)); k * r < e.offset; ++k)
      if (std::min(e.offset, (k + 1) * r) - std::max(e.onset, k * r) > 0) cells.insert(k);
  }
  return cells;
}

// Per-class error count: cells active in exactly one of ref / hyp.
std::size_t oracle_class_errors(const Events& ref, const Events& hyp, const std::string& label, double r) {
  const auto a = active_cells(ref, label, r);
  const auto b = active_cells(hyp, label, r);
  std::vector<long> diff;
  std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(diff));
  return diff.size();
}

LeafModel voting_leaf(double p, double on_mean, double on_var, double off_mean, double off_var) {
  LeafModel l;
  l.p_pos = p;
  l.p_neg = 1.0 - p;
  l.onset = Gaussian{on_mean, on_var};
  l.offset = Gaussian{off_mean, off_var};
  return l;
}

// Stumps on x[0] - x[1]; positives (x[0] high) vote for a 60-segment event.
Forest toy_forest(std::mt19937_64& rng, const std::string& label) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Forest f;
  f.class_label = label;
  f.dim = 2;
  f.feature_fingerprint = FeatureConfig{}.fingerprint();
  for (int t = 0; t < 4; ++t) {
    std::vector<TreeNode> nodes(3);
    nodes[0].is_leaf = false;
    nodes[0].test = {0, 1, 0.5 + 0.2 * u(rng)};
    nodes[0].left = 1;
    nodes[0].right = 2;
    nodes[1].leaf = voting_leaf(0.3 * u(rng), 10, 30, 10, 30);
    nodes[2].leaf = voting_leaf(0.6 + 0.4 * u(rng), 30 * u(rng), 20 + 20 * u(rng), 30 * u(rng), 20 + 20 * u(rng));
    f.trees.emplace_back(std::move(nodes));
  }
  f.z_plus = 0.2;
  f.z_minus = 0.2;
  f.max_train_event_duration = 0.8;
  return f;
}

// Stream where x[0] is high inside each reference event of `label`.
DevStream toy_stream(std::mt19937_64& rng, const std::string& label, int events) {
  std::normal_distribution<double> g(0.0, 0.3);
  DevStream s;
  s.features = FeatureMatrix(2, 0.01, 0.1);
  const std::size_t rows = 150 * static_cast<std::size_t>(events) + 100;
  for (int e = 0; e < events; ++e) {
    const double on = 0.5 + 1.5 * e + 0.3 * std::abs(g(rng));
    s.references.push_back({on, on + 0.6, label});
  }
  for (std::size_t m = 0; m < rows; ++m) {
    const double c = 0.01 * m + 0.05;
    bool inside = false;
    for (const auto& e : s.references) inside |= c >= e.onset && c < e.offset;
    s.features.append_row(std::vector<double>{(inside ? 1.0 : 0.0) + g(rng), g(rng)}, 0.01 * m);
  }
  return s;
}

}  // namespace

TEST_CASE("segment metrics: worked ten-cell example") {
  const Events ref{{0.0, 10.0, "a"}};
  const Events hyp{{0.0, 8.0, "a"}, {12.0, 13.0, "a"}};
  const auto r = segment_metrics(ref, hyp);
  CHECK(r.overall.N == 10);
  CHECK(r.overall.TP == 8);
  CHECK(r.overall.D == 2);
  CHECK(r.overall.I == 1);
  CHECK(r.overall.S == 0);
  CHECK(*r.overall.error_rate() == Approx(0.3));
  CHECK(*r.overall.f1() == Approx(16.0 / 19.0));
  CHECK(*r.overall.f1() * 100 == Approx(84.2).margin(0.05));
}

TEST_CASE("segment metrics: self evaluation and empty hypothesis") {
  const Events ref{{0.2, 1.7, "a"}, {1.0, 4.5, "b"}, {6.0, 6.1, "a"}};
  const auto self = segment_metrics(ref, ref);
  CHECK(*self.overall.error_rate() == 0.0);
  CHECK(*self.overall.f1() == 1.0);
  for (const auto& [label, c] : self.per_class) CHECK(c.errors() == 0);

  const auto none = segment_metrics(ref, {});
  CHECK(*none.overall.error_rate() == 1.0);
  CHECK(*none.overall.f1() == 0.0);

  const auto empty = segment_metrics({}, {});
  CHECK_FALSE(empty.overall.error_rate().has_value());
  CHECK_FALSE(empty.overall.f1().has_value());
}

TEST_CASE("segment metrics: a wrong label in a cell is a substitution") {
  const Events ref{{0.0, 1.0, "a"}, {1.0, 2.0, "a"}};
  const Events hyp{{0.0, 1.0, "b"}};
  const auto r = segment_metrics(ref, hyp);
  CHECK(r.overall.S == 1);
  CHECK(r.overall.D == 1);
  CHECK(r.overall.I == 0);
  CHECK(*r.overall.error_rate() == Approx(1.0));
  // per class, the same cell is a deletion for a and an insertion for b
  CHECK(r.per_class.at("a").D == 2);
  CHECK(r.per_class.at("b").I == 1);
}

TEST_CASE("segment metrics: class counts match the cell oracle") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  const std::vector<std::string> labels{"a", "b", "c"};
  for (int trial = 0; trial < 100; ++trial) {
    Events ref, hyp;
    for (int i = 0; i < 6; ++i) {
      const double a = u(rng), b = u(rng);
      ref.push_back({a, a + 0.1 + b / 10, labels[rng() % 3]});
      hyp.push_back({b, b + 0.1 + a / 10, labels[rng() % 3]});
    }
    for (double res : {1.0, 0.5}) {
      const auto r = segment_metrics(ref, hyp, res);
      std::size_t n = 0;
      for (const auto& l : labels) {
        const auto want = oracle_class_errors(ref, hyp, l, res);
        const auto it = r.per_class.find(l);
        const std::size_t got = it == r.per_class.end() ? 0 : it->second.errors();
        CHECK(got == want);
        n += active_cells(ref, l, res).size();
        std::vector<Detection> dets;
        for (const auto& e : hyp) dets.push_back({e.label, e.onset, e.offset, 1.0});
        CHECK(class_segment_counts(ref, dets, l, res).errors() == want);
      }
      CHECK(r.overall.N == n);
      CHECK(r.overall.TP + r.overall.FN == n);
    }
  }
}

TEST_CASE("metrics are invariant under event permutation") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 30.0);
  Events ref, hyp;
  for (int i = 0; i < 15; ++i) {
    const double a = u(rng);
    ref.push_back({a, a + 1.0, i % 2 ? "a" : "b"});
    hyp.push_back({a + 0.05 * (i % 5), a + 0.8, i % 3 ? "a" : "b"});
  }
  const auto seg0 = segment_metrics(ref, hyp);
  const auto ev0 = event_metrics(ref, hyp);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(ref.begin(), ref.end(), rng);
    std::shuffle(hyp.begin(), hyp.end(), rng);
    const auto seg1 = segment_metrics(ref, hyp);
    const auto ev1 = event_metrics(ref, hyp);
    CHECK(seg1.overall.errors() == seg0.overall.errors());
    CHECK(seg1.overall.TP == seg0.overall.TP);
    CHECK(ev1.overall.errors() == ev0.overall.errors());
    CHECK(ev1.overall.TP == ev0.overall.TP);
  }
}

TEST_CASE("event metrics: collar matching") {
  const Events ref{{1.0, 2.0, "a"}};
  const auto exact = event_metrics(ref, ref);
  CHECK(*exact.overall.f1() == 1.0);
  CHECK(*exact.overall.error_rate() == 0.0);

  const auto none = event_metrics(ref, {});
  CHECK(*none.overall.error_rate() == 1.0);

  const Events late{{1.5, 2.0, "a"}};
  const auto off = event_metrics(ref, late);
  CHECK(off.overall.D == 1);
  CHECK(off.overall.I == 1);
  CHECK(*off.overall.error_rate() == Approx(2.0));
  CHECK(*off.overall.f1() == 0.0);

  const Events close{{1.15, 2.0, "a"}};
  CHECK(event_metrics(ref, close).overall.TP == 1);

  const Events wrong{{1.0, 2.0, "b"}};
  const auto sub = event_metrics(ref, wrong);
  CHECK(sub.overall.S == 1);
  CHECK(sub.overall.D == 0);
  CHECK(sub.overall.I == 0);
  CHECK(*sub.overall.error_rate() == 1.0);
}

TEST_CASE("report table and CSV carry the same numbers") {
  const Events ref{{0.0, 10.0, "a"}, {3.0, 5.0, "b"}};
  const Events hyp{{0.0, 8.0, "a"}, {12.0, 13.0, "a"}};
  const auto r = segment_metrics(ref, hyp);
  const std::string table = format_report(r, "Segment-based");
  CHECK(table.find("Overall") != std::string::npos);
  CHECK(table.find("Event type") != std::string::npos);

  std::istringstream csv(report_csv(r, "segment"));
  std::string line;
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    REQUIRE(f.size() == 11);
    const ErrorCounts& c = f[1] == "overall" ? r.overall : r.per_class.at(f[1]);
    CHECK(std::stoul(f[2]) == c.N);
    CHECK(std::stoul(f[6]) == c.TP);
    CHECK(std::stod(f[9]) == Approx(*c.error_rate()).margin(1e-6));
  }
  CHECK(rows == 3);
}

TEST_CASE("threshold grid has 21 alphas and 41 betas") {
  const auto g = ThresholdGrid::standard();
  REQUIRE(g.alphas.size() == 21);
  REQUIRE(g.betas.size() == 41);
  CHECK(g.alphas.front() == 0.0);
  CHECK(g.alphas.back() == Approx(1.0));
  CHECK(g.alphas[1] == Approx(0.05));
  CHECK(g.betas[1] == Approx(0.025));
  CHECK(g.betas.back() == Approx(1.0));
}

TEST_CASE("tuning picks the minimum of an independent full-grid evaluation") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    const Forest f = toy_forest(rng, "a");
    const std::vector<DevStream> streams{toy_stream(rng, "a", 4), toy_stream(rng, "a", 3)};
    const auto grid = ThresholdGrid::standard();
    TuneOptions opt;
    const TuneResult got = tune_thresholds(streams, f, grid, opt);
    CHECK(got.evaluated == 21 * 41);

    std::size_t best = SIZE_MAX;
    double best_a = -1, best_b = -1;
    for (double a : grid.alphas)
      for (double b : grid.betas) {
        std::size_t err = 0;
        for (const auto& s : streams) {
          const auto track = smooth(accumulate(s.features, f, a), opt.smooth_window);
          auto ev = filter_duration(extract_events(track, b, 0.01, 0.05, "a"), f.max_train_event_duration, 3.0);
          Events hyp;
          for (const auto& d : ev) hyp.push_back({d.onset, d.offset, d.label});
          err += oracle_class_errors(s.references, hyp, "a", 1.0);
        }
        if (err < best || (err == best && (b > best_b || (b == best_b && a > best_a)))) {
          best = err;
          best_a = a;
          best_b = b;
        }
      }
    CHECK(got.errors == best);
    CHECK(got.alpha == best_a);
    CHECK(got.beta == best_b);
    CHECK_FALSE(got.ignored);
    // a toy detector this clean should beat doing nothing
    CHECK(got.errors < got.reference_count);
  }
}

TEST_CASE("tuning: an absent class falls back to the ignorance threshold") {
  std::mt19937_64 rng(4);
  const Forest f = toy_forest(rng, "a");
  DevStream s = toy_stream(rng, "a", 4);
  for (auto& e : s.references) e.label = "other";
  const std::vector<DevStream> streams{s};
  TuneOptions opt;
  opt.allow_ignorance = true;
  const TuneResult r = tune_thresholds(streams, f, ThresholdGrid::standard(), opt);
  CHECK(r.evaluated == 21 * 41 + 1);
  CHECK(r.ignored);
  CHECK(r.beta == 1.01);
  CHECK(r.errors == 0);
  CHECK_FALSE(r.error_rate().has_value());
  // nothing is emitted at the chosen thresholds
  CHECK(detect_with(s, f, r.alpha, r.beta, opt).empty());
}

TEST_CASE("tuning with ignorance never exceeds ER 1 on the tuning data") {
  std::mt19937_64 rng(5);
  Forest f = toy_forest(rng, "a");
  // a detector that fires everywhere
  for (auto& t : f.trees)
    for (auto& n : t.mutable_nodes())
      if (n.is_leaf) n.leaf = voting_leaf(1.0, 0.0, 4.0, 3.0, 4.0);
  const std::vector<DevStream> streams{toy_stream(rng, "a", 3)};
  TuneOptions opt;
  opt.allow_ignorance = true;
  const TuneResult r = tune_thresholds(streams, f, ThresholdGrid::standard(), opt);
  REQUIRE(r.error_rate().has_value());
  CHECK(*r.error_rate() <= 1.0);
}

TEST_CASE("tuning input validation") {
  std::mt19937_64 rng(6);
  const Forest f = toy_forest(rng, "a");
  CHECK_THROWS_AS(tune_thresholds({}, f, ThresholdGrid::standard(), {}), Error);
  const std::vector<DevStream> streams{toy_stream(rng, "a", 1)};
  CHECK_THROWS_AS(tune_thresholds(streams, f, ThresholdGrid{}, {}), Error);
}
