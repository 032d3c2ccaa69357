#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>

#include "sedforest/audio.hpp"
#include "sedforest/error.hpp"
#include "sedforest/features.hpp"
#include "test_util.hpp"

using namespace sedforest;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace fs = std::filesystem;

TEST_CASE("wav: 16-bit mono sample is scaled to [-1, 1]") {
  const auto bytes = testutil::wav_bytes(1, 1, 22050, 16, testutil::pcm16({16384}));
  const Waveform w = decode_wav(bytes);
  REQUIRE(w.sample_rate == 22050);
  REQUIRE(w.samples.size() == 1);
  CHECK(w.samples[0] == Approx(0.5).margin(1e-4));
}

TEST_CASE("wav: stereo channels are averaged") {
  const auto bytes = testutil::wav_bytes(3, 2, 16000, 32, testutil::float32({1.0f, 0.0f}));
  const Waveform w = decode_wav(bytes);
  REQUIRE(w.samples.size() == 1);
  CHECK(w.samples[0] == Approx(0.5));
}

TEST_CASE("wav: 8-bit unsigned and 24-bit signed PCM") {
  const Waveform w8 = decode_wav(testutil::wav_bytes(1, 1, 8000, 8, {0, 128, 255}));
  REQUIRE(w8.samples.size() == 3);
  CHECK(w8.samples[0] == Approx(-1.0));
  CHECK(w8.samples[1] == Approx(0.0));
  CHECK(w8.samples[2] == Approx(127.0 / 128.0));

  // -2^22 in 24-bit two's complement, little endian
  const Waveform w24 = decode_wav(testutil::wav_bytes(1, 1, 8000, 24, {0x00, 0x00, 0xC0}));
  REQUIRE(w24.samples.size() == 1);
  CHECK(w24.samples[0] == Approx(-0.5));
}

TEST_CASE("wav: corrupt and unsupported inputs report the problem") {
  auto bytes = testutil::wav_bytes(1, 1, 16000, 16, testutil::pcm16({1, 2, 3}));
  const std::vector<unsigned char> truncated(bytes.begin(), bytes.begin() + 20);
  CHECK_THROWS_WITH(decode_wav(truncated), ContainsSubstring("unsupported/corrupt container"));

  const std::vector<unsigned char> junk(64, 'x');
  CHECK_THROWS_WITH(decode_wav(junk), ContainsSubstring("unsupported/corrupt container"));

  const auto alaw = testutil::wav_bytes(6, 1, 8000, 8, {1, 2});
  CHECK_THROWS_WITH(decode_wav(alaw), ContainsSubstring("unsupported encoding"));

  CHECK_THROWS_AS(load_audio("/nonexistent/file.wav"), Error);
}

TEST_CASE("wav: float round trip through a file") {
  const fs::path p = fs::temp_directory_path() / "sedforest_roundtrip.wav";
  Waveform w = testutil::sine(440.0, 0.05, 16000);
  write_wav(p, w);
  const Waveform r = load_audio(p);
  REQUIRE(r.sample_rate == 16000);
  REQUIRE(r.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    CHECK(r.samples[i] == Approx(static_cast<float>(w.samples[i])).margin(0.0));
  fs::remove(p);
}

TEST_CASE("resample: equal rates give a bit-identical copy") {
  const Waveform w = testutil::white_noise(0.1, 16000, 3);
  const Waveform r = resample(w, 16000);
  CHECK(r.samples == w.samples);
}

TEST_CASE("resample: DC is preserved away from the edges") {
  Waveform w;
  w.sample_rate = 48000;
  w.samples.assign(48000, 0.7);
  const Waveform r = resample(w, 16000);
  REQUIRE(r.sample_rate == 16000);
  CHECK(std::abs(static_cast<double>(r.samples.size()) - 16000.0) <= 1.0);
  double worst = 0.0;
  for (std::size_t i = 200; i + 200 < r.samples.size(); ++i) worst = std::max(worst, std::abs(r.samples[i] - 0.7));
  CHECK(worst < 1e-3);
}

TEST_CASE("resample: a 1 kHz tone keeps its spectral peak") {
  const Waveform w = testutil::sine(1000.0, 1.0, 48000);
  const Waveform r = resample(w, 16000);
  REQUIRE(r.samples.size() == 16000);
  // direct DFT magnitude over 0..Nyquist in 1 Hz bins
  std::size_t best = 0;
  double best_mag = -1.0;
  const double n = static_cast<double>(r.samples.size());
  for (std::size_t k = 0; k <= 8000; k += 1) {
    if (k % 50 != 0 && (k < 950 || k > 1050)) continue;  // coarse sweep plus a fine window
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < r.samples.size(); ++i)
      acc += r.samples[i] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * i) / n);
    if (std::abs(acc) > best_mag) {
      best_mag = std::abs(acc);
      best = k;
    }
  }
  CHECK(std::abs(static_cast<long>(best) - 1000) <= 1);
}

TEST_CASE("resample: arbitrary ratios keep duration within one sample") {
  const Waveform w = testutil::white_noise(0.37, 44100, 9);
  for (int rate : {8000, 16000, 22050, 32000}) {
    const Waveform r = resample(w, rate);
    CHECK(std::abs(r.duration() - w.duration()) <= 1.0 / rate + 1e-12);
  }
}

TEST_CASE("features: segment count formula") {
  CHECK(segment_count(16000, 1600, 160) == 91);
  CHECK(segment_count(1599, 1600, 160) == 0);
  CHECK(segment_count(1600, 1600, 160) == 1);

  FeatureConfig cfg;
  const Waveform w = testutil::white_noise(1.0, 16000, 1);
  const FeatureMatrix f = gammatone_cepstra(w, cfg);
  CHECK(f.rows() == 91);
  CHECK(f.dim() == 64);
  for (std::size_t m = 1; m < f.rows(); ++m)
    CHECK(f.segment_time(m) - f.segment_time(m - 1) == Approx(0.01));
}

TEST_CASE("features: shorter than a window yields an empty matrix") {
  const FeatureMatrix f = gammatone_cepstra(testutil::white_noise(0.05, 16000, 1), FeatureConfig{});
  CHECK(f.rows() == 0);
}

TEST_CASE("features: silence gives identical rows") {
  Waveform w;
  w.samples.assign(8000, 0.0);
  const FeatureMatrix f = gammatone_cepstra(w, FeatureConfig{});
  REQUIRE(f.rows() == segment_count(8000, 1600, 160));
  for (std::size_t m = 1; m < f.rows(); ++m)
    for (std::size_t c = 0; c < f.dim(); ++c) CHECK(f.row(m)[c] == f.row(0)[c]);
}

TEST_CASE("features: dimensionality equals channel count for any input") {
  FeatureConfig cfg;
  cfg.n_channels = 20;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const FeatureMatrix f = gammatone_cepstra(testutil::white_noise(0.3, 16000, seed), cfg);
    CHECK(f.dim() == 20);
  }
  cfg.n_channels = 64;
  CHECK(gammatone_cepstra(testutil::sine(300, 0.3, 44100), cfg).dim() == 64);
}

TEST_CASE("features: deterministic for identical input") {
  const Waveform w = testutil::white_noise(0.4, 16000, 5);
  const FeatureMatrix a = gammatone_cepstra(w, FeatureConfig{});
  const FeatureMatrix b = gammatone_cepstra(w, FeatureConfig{});
  REQUIRE(a.rows() == b.rows());
  for (std::size_t m = 0; m < a.rows(); ++m)
    for (std::size_t c = 0; c < a.dim(); ++c) CHECK(a.row(m)[c] == b.row(m)[c]);
}

TEST_CASE("features: noise and tone centroids separate") {
  const FeatureConfig cfg;
  const FeatureMatrix noise = gammatone_cepstra(testutil::white_noise(1.0, 16000, 11), cfg);
  const FeatureMatrix tone = gammatone_cepstra(testutil::sine(500.0, 1.0, 16000), cfg);
  auto centroid = [](const FeatureMatrix& f) {
    std::vector<double> c(f.dim(), 0.0);
    for (std::size_t m = 0; m < f.rows(); ++m)
      for (std::size_t k = 0; k < f.dim(); ++k) c[k] += f.row(m)[k] / static_cast<double>(f.rows());
    return c;
  };
  const auto a = centroid(noise);
  const auto b = centroid(tone);
  double dist = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) dist += (a[k] - b[k]) * (a[k] - b[k]);
  CHECK(std::sqrt(dist) > 1.0);
}

TEST_CASE("features: ERB-rate spacing of centre frequencies") {
  const auto fc = erb_center_frequencies(64, 50.0, 8000.0);
  REQUIRE(fc.size() == 64);
  CHECK(fc.front() == Approx(50.0));
  CHECK(fc.back() == Approx(8000.0));
  auto erb_rate = [](double f) { return 21.4 * std::log10(1.0 + 0.00437 * f); };
  const double step = erb_rate(fc[1]) - erb_rate(fc[0]);
  for (std::size_t i = 1; i < fc.size(); ++i) {
    CHECK(fc[i] > fc[i - 1]);
    CHECK(erb_rate(fc[i]) - erb_rate(fc[i - 1]) == Approx(step).epsilon(1e-9));
  }
}

TEST_CASE("features: tone energy peaks in the nearest channel") {
  FeatureConfig cfg;
  const FeatureMatrix e = filterbank_energies(testutil::sine(1000.0, 0.2, 16000), cfg);
  const auto fc = erb_center_frequencies(cfg.n_channels, cfg.f_min, cfg.f_max);
  const auto row = e.row(5);
  const auto peak = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  std::size_t nearest = 0;
  for (std::size_t c = 0; c < fc.size(); ++c)
    if (std::abs(fc[c] - 1000.0) < std::abs(fc[nearest] - 1000.0)) nearest = c;
  CHECK(peak == nearest);
}

TEST_CASE("features: cepstra are the orthonormal DCT-II of log energies") {
  FeatureMatrix e(4, 0.01, 0.1);
  const std::vector<double> row{1.0, 0.5, 0.0, 2.0};
  e.append_row(row, 0.0);
  const FeatureMatrix c = log_energy_cepstra(e);
  const double n = 4.0;
  for (int k = 0; k < 4; ++k) {
    double acc = 0.0;
    for (int i = 0; i < 4; ++i)
      acc += std::log(row[static_cast<std::size_t>(i)] + kEnergyFloor) *
             std::cos(std::numbers::pi * (i + 0.5) * k / n);
    acc *= k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    CHECK(c.row(0)[static_cast<std::size_t>(k)] == Approx(acc).margin(1e-12));
  }
}

TEST_CASE("noise floor: constant channel drops to the log floor") {
  FeatureMatrix e(2, 0.01, 0.1);
  for (int m = 0; m < 20; ++m) e.append_row(std::vector<double>{1.0, m == 7 ? 5.0 : 0.0}, m * 0.01);
  const FeatureMatrix s = subtract_noise_floor(e);
  for (std::size_t m = 0; m < s.rows(); ++m) {
    CHECK(s.row(m)[0] == kEnergyFloor);
    CHECK(s.row(m)[1] == (m == 7 ? 5.0 : kEnergyFloor));
  }
}

TEST_CASE("noise floor: percentile uses linear interpolation") {
  FeatureMatrix e(1, 0.01, 0.1);
  // values 1..11: 10th percentile at position 1.0 -> 2
  for (int m = 1; m <= 11; ++m) e.append_row(std::vector<double>{static_cast<double>(m)}, m * 0.01);
  const FeatureMatrix s = subtract_noise_floor(e);
  CHECK(s.row(10)[0] == Approx(9.0));
}

TEST_CASE("noise floor: background energy drops in tone-in-noise") {
  FeatureConfig cfg;
  Waveform w = testutil::white_noise(2.0, 16000, 21, 0.05);
  const Waveform tone = testutil::sine(800.0, 0.5, 16000, 0.3);
  for (std::size_t i = 0; i < tone.samples.size(); ++i) w.samples[8000 + i] += tone.samples[i];
  const FeatureMatrix e = filterbank_energies(w, cfg);
  const FeatureMatrix s = subtract_noise_floor(e);
  // a background-only segment, well before the tone
  const std::size_t m = 10;
  std::size_t reduced = 0;
  for (std::size_t c = 0; c < e.dim(); ++c)
    if (s.row(m)[c] < e.row(m)[c]) ++reduced;
  CHECK(reduced >= static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(e.dim()))));
}

TEST_CASE("features: noise subtraction changes the fingerprint") {
  FeatureConfig a;
  FeatureConfig b;
  b.noise_subtraction = true;
  CHECK(a.fingerprint() != b.fingerprint());
  CHECK(a.fingerprint() == FeatureConfig{}.fingerprint());
}

TEST_CASE("features: invalid configurations are rejected") {
  FeatureConfig cfg;
  cfg.f_max = 9000.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.hop_len = 0.2;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.n_channels = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("features: CSV dump starts each row with the onset time") {
  const fs::path p = fs::temp_directory_path() / "sedforest_features.csv";
  FeatureMatrix f(2, 0.01, 0.1);
  f.append_row(std::vector<double>{1.0, 2.0}, 0.0);
  f.append_row(std::vector<double>{3.0, 4.0}, 0.01);
  write_features_csv(p, f);
  const std::string text = testutil::read_file(p);
  CHECK(text.find("0.01,3,4") != std::string::npos);
  fs::remove(p);
}
