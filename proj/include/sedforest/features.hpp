#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sedforest/audio.hpp"

namespace sedforest {

struct FeatureConfig {
  int n_channels = 64;
  double f_min = 50.0;    // Hz
  double f_max = 8000.0;  // Hz
  double window_len = 0.100;  // seconds
  double hop_len = 0.010;     // seconds
  bool noise_subtraction = false;
  int sample_rate = 16000;

  void validate() const;
  std::size_t window_samples() const;
  std::size_t hop_samples() const;
  /// Canonical text identifying every setting that changes feature values.
  std::string fingerprint() const;
};

/// Row-major matrix of per-segment vectors with the onset time of each row.
/// Used both for filterbank energies and for cepstral features.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t dim, double hop_len, double window_len);

  std::size_t rows() const { return times_.size(); }
  std::size_t dim() const { return dim_; }
  bool empty() const { return times_.empty(); }
  double hop_len() const { return hop_len_; }
  double window_len() const { return window_len_; }

  std::span<const double> row(std::size_t m) const { return {values_.data() + m * dim_, dim_}; }
  std::span<double> row(std::size_t m) { return {values_.data() + m * dim_, dim_}; }
  double segment_time(std::size_t m) const { return times_[m]; }
  const std::vector<double>& segment_times() const { return times_; }
  /// Centre of segment m in seconds.
  double segment_center(std::size_t m) const { return times_[m] + 0.5 * window_len_; }

  void append_row(std::span<const double> values, double time);

 private:
  std::size_t dim_ = 0;
  double hop_len_ = 0.0;
  double window_len_ = 0.0;
  std::vector<double> values_;
  std::vector<double> times_;
};

/// Number of full windows that fit; trailing partial windows are dropped.
std::size_t segment_count(std::size_t n_samples, std::size_t window, std::size_t hop);

/// ERB-rate spaced centre frequencies on [f_min, f_max].
std::vector<double> erb_center_frequencies(int n_channels, double f_min, double f_max);

/// Per-segment 4th-order gammatone filterbank energies (Hann-windowed power
/// spectrum weighted by each channel's magnitude-squared response).
FeatureMatrix filterbank_energies(const Waveform& w, const FeatureConfig& cfg);

/// Subtracts a per-channel floor (10th percentile over segments) and clamps
/// the result at kEnergyFloor.
FeatureMatrix subtract_noise_floor(const FeatureMatrix& energies);

/// DCT-II (orthonormal) of log(energy + kEnergyFloor), all coefficients kept.
FeatureMatrix log_energy_cepstra(const FeatureMatrix& energies);

/// Full pipeline: resample if needed, filterbank, optional floor subtraction,
/// log, DCT. A waveform shorter than one window yields an empty matrix.
FeatureMatrix gammatone_cepstra(const Waveform& w, const FeatureConfig& cfg);

/// CSV dump: onset seconds followed by the feature values of each row.
void write_features_csv(const std::filesystem::path& path, const FeatureMatrix& features);

inline constexpr double kEnergyFloor = 1e-10;
inline constexpr double kNoiseFloorPercentile = 0.10;

}  // namespace sedforest
