#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace sedforest {

/// Mono audio signal. Samples are nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

/// Reads a RIFF/WAVE file (PCM 8/16/24/32-bit integer or 32/64-bit float,
/// plain or WAVE_FORMAT_EXTENSIBLE). Channels are averaged to mono.
/// Throws Error naming the problem for unreadable or unsupported files.
Waveform load_audio(const std::filesystem::path& path);

/// Parses an in-memory WAVE image; `load_audio` is a thin wrapper.
Waveform decode_wav(std::span<const unsigned char> bytes);

/// Writes a mono 32-bit float WAVE file.
void write_wav(const std::filesystem::path& path, const Waveform& w);

/// Rational-ratio polyphase resampler with a Kaiser-windowed sinc kernel.
/// Identity (bit-identical copy) when the rates already match.
Waveform resample(const Waveform& w, int target_rate);

/// Root-mean-square amplitude; 0 for an empty signal.
double rms(std::span<const double> samples);

}  // namespace sedforest
