#include "sedforest/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>

#include "sedforest/error.hpp"

namespace sedforest {

namespace {

// FFTW planning is not thread-safe.
std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

double erb_rate(double f) { return 21.4 * std::log10(1.0 + 0.00437 * f); }
double erb_rate_inverse(double e) { return (std::pow(10.0, e / 21.4) - 1.0) / 0.00437; }
double erb_bandwidth(double f) { return 24.7 * (4.37 * f / 1000.0 + 1.0); }

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Sparse per-channel spectral weights: first bin and the weights from there.
struct ChannelWeights {
  std::size_t first_bin = 0;
  std::vector<double> weights;
};

std::vector<ChannelWeights> gammatone_weights(const FeatureConfig& cfg, std::size_t fft_size) {
  const auto centers = erb_center_frequencies(cfg.n_channels, cfg.f_min, cfg.f_max);
  const std::size_t n_bins = fft_size / 2 + 1;
  const double bin_hz = static_cast<double>(cfg.sample_rate) / fft_size;
  std::vector<ChannelWeights> out(centers.size());
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double b = 1.019 * erb_bandwidth(centers[c]);
    std::vector<double> full(n_bins);
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double x = (k * bin_hz - centers[c]) / b;
      // |H|^2 of a 4th-order gammatone, unit gain at the centre frequency
      full[k] = std::pow(1.0 + x * x, -4.0);
    }
    std::size_t lo = 0;
    std::size_t hi = n_bins;
    while (lo < n_bins && full[lo] < 1e-9) ++lo;
    while (hi > lo && full[hi - 1] < 1e-9) --hi;
    out[c].first_bin = lo;
    out[c].weights.assign(full.begin() + static_cast<long>(lo), full.begin() + static_cast<long>(hi));
  }
  return out;
}

}  // namespace

void FeatureConfig::validate() const {
  if (sample_rate <= 0) throw Error("feature config: sample_rate must be positive");
  if (n_channels < 2) throw Error("feature config: n_channels must be >= 2");
  if (!(f_min > 0.0 && f_min < f_max && f_max <= sample_rate / 2.0))
    throw Error("feature config: need 0 < f_min < f_max <= sample_rate/2");
  if (!(hop_len > 0.0 && hop_len <= window_len))
    throw Error("feature config: need 0 < hop_len <= window_len");
  if (window_samples() == 0 || hop_samples() == 0)
    throw Error("feature config: window or hop shorter than one sample");
}

std::size_t FeatureConfig::window_samples() const {
  return static_cast<std::size_t>(std::llround(window_len * sample_rate));
}

std::size_t FeatureConfig::hop_samples() const {
  return static_cast<std::size_t>(std::llround(hop_len * sample_rate));
}

std::string FeatureConfig::fingerprint() const {
  std::ostringstream os;
  os.precision(17);
  os << "gtcc/v1;sr=" << sample_rate << ";channels=" << n_channels << ";fmin=" << f_min
     << ";fmax=" << f_max << ";window=" << window_len << ";hop=" << hop_len
     << ";noise_subtraction=" << (noise_subtraction ? 1 : 0);
  return os.str();
}

FeatureMatrix::FeatureMatrix(std::size_t dim, double hop_len, double window_len)
    : dim_(dim), hop_len_(hop_len), window_len_(window_len) {}

void FeatureMatrix::append_row(std::span<const double> values, double time) {
  if (values.size() != dim_) throw Error("feature row has wrong dimensionality");
  values_.insert(values_.end(), values.begin(), values.end());
  times_.push_back(time);
}

std::size_t segment_count(std::size_t n_samples, std::size_t window, std::size_t hop) {
  if (window == 0 || hop == 0 || n_samples < window) return 0;
  return (n_samples - window) / hop + 1;
}

std::vector<double> erb_center_frequencies(int n_channels, double f_min, double f_max) {
  std::vector<double> out(static_cast<std::size_t>(n_channels));
  const double lo = erb_rate(f_min);
  const double hi = erb_rate(f_max);
  for (int c = 0; c < n_channels; ++c)
    out[static_cast<std::size_t>(c)] = erb_rate_inverse(lo + (hi - lo) * c / (n_channels - 1));
  return out;
}

FeatureMatrix filterbank_energies(const Waveform& w, const FeatureConfig& cfg) {
  cfg.validate();
  if (w.sample_rate != cfg.sample_rate)
    throw Error("filterbank_energies: waveform rate " + std::to_string(w.sample_rate) +
                " differs from feature rate " + std::to_string(cfg.sample_rate));

  const std::size_t win = cfg.window_samples();
  const std::size_t hop = cfg.hop_samples();
  const double hop_s = static_cast<double>(hop) / cfg.sample_rate;
  const double win_s = static_cast<double>(win) / cfg.sample_rate;
  FeatureMatrix out(static_cast<std::size_t>(cfg.n_channels), hop_s, win_s);

  const std::size_t n_seg = segment_count(w.samples.size(), win, hop);
  if (n_seg == 0) return out;

  const std::size_t fft_size = next_pow2(win);
  const std::size_t n_bins = fft_size / 2 + 1;
  const auto weights = gammatone_weights(cfg, fft_size);

  std::vector<double> window(win);
  double window_energy = 0.0;
  for (std::size_t i = 0; i < win; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);
    window_energy += window[i] * window[i];
  }

  std::unique_ptr<double, FftwFree> in(static_cast<double*>(fftw_malloc(sizeof(double) * fft_size)));
  std::unique_ptr<fftw_complex, FftwFree> spec(
      static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n_bins)));
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_plan_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(fft_size), in.get(), spec.get(), FFTW_ESTIMATE);
  }

  std::vector<double> power(n_bins);
  std::vector<double> row(static_cast<std::size_t>(cfg.n_channels));
  for (std::size_t m = 0; m < n_seg; ++m) {
    const double* src = w.samples.data() + m * hop;
    for (std::size_t i = 0; i < win; ++i) in.get()[i] = src[i] * window[i];
    std::fill(in.get() + win, in.get() + fft_size, 0.0);
    fftw_execute(plan);
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double re = spec.get()[k][0];
      const double im = spec.get()[k][1];
      power[k] = (re * re + im * im) / window_energy;
    }
    for (std::size_t c = 0; c < weights.size(); ++c) {
      double acc = 0.0;
      const auto& cw = weights[c];
      for (std::size_t k = 0; k < cw.weights.size(); ++k) acc += cw.weights[k] * power[cw.first_bin + k];
      row[c] = acc;
    }
    out.append_row(row, static_cast<double>(m * hop) / cfg.sample_rate);
  }
  {
    std::lock_guard lock(fftw_plan_mutex());
    fftw_destroy_plan(plan);
  }
  return out;
}

FeatureMatrix subtract_noise_floor(const FeatureMatrix& energies) {
  FeatureMatrix out = energies;
  const std::size_t n = energies.rows();
  if (n == 0) return out;
  std::vector<double> column(n);
  for (std::size_t c = 0; c < energies.dim(); ++c) {
    for (std::size_t m = 0; m < n; ++m) {
      const double e = energies.row(m)[c];
      if (!(e >= 0.0)) throw Error("subtract_noise_floor: energies must be nonnegative");
      column[m] = e;
    }
    std::sort(column.begin(), column.end());
    // linear interpolation between order statistics
    const double pos = kNoiseFloorPercentile * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double floor = column[lo] + (pos - static_cast<double>(lo)) * (column[hi] - column[lo]);
    for (std::size_t m = 0; m < n; ++m) {
      double& e = out.row(m)[c];
      e = std::max(e - floor, kEnergyFloor);
    }
  }
  return out;
}

FeatureMatrix log_energy_cepstra(const FeatureMatrix& energies) {
  const std::size_t dim = energies.dim();
  FeatureMatrix out(dim, energies.hop_len(), energies.window_len());
  if (dim == 0) return out;

  std::vector<double> basis(dim * dim);
  for (std::size_t k = 0; k < dim; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / dim);
    for (std::size_t c = 0; c < dim; ++c)
      basis[k * dim + c] = scale * std::cos(std::numbers::pi * k * (2.0 * c + 1.0) / (2.0 * dim));
  }

  std::vector<double> logs(dim);
  std::vector<double> row(dim);
  for (std::size_t m = 0; m < energies.rows(); ++m) {
    const auto e = energies.row(m);
    for (std::size_t c = 0; c < dim; ++c) logs[c] = std::log(e[c] + kEnergyFloor);
    for (std::size_t k = 0; k < dim; ++k) {
      double acc = 0.0;
      for (std::size_t c = 0; c < dim; ++c) acc += basis[k * dim + c] * logs[c];
      row[k] = acc;
    }
    out.append_row(row, energies.segment_time(m));
  }
  return out;
}

FeatureMatrix gammatone_cepstra(const Waveform& w, const FeatureConfig& cfg) {
  cfg.validate();
  FeatureMatrix energies = w.sample_rate == cfg.sample_rate
                               ? filterbank_energies(w, cfg)
                               : filterbank_energies(resample(w, cfg.sample_rate), cfg);
  if (cfg.noise_subtraction) energies = subtract_noise_floor(energies);
  return log_energy_cepstra(energies);
}

void write_features_csv(const std::filesystem::path& path, const FeatureMatrix& features) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write feature file: " + path.string());
  out.precision(17);
  for (std::size_t m = 0; m < features.rows(); ++m) {
    out << features.segment_time(m);
    for (double v : features.row(m)) out << ',' << v;
    out << '\n';
  }
}

}  // namespace sedforest
