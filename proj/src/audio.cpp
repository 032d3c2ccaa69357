#include "sedforest/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <string>

#include "sedforest/error.hpp"

namespace sedforest {

namespace {

constexpr std::uint16_t kFormatPcm = 0x0001;
constexpr std::uint16_t kFormatFloat = 0x0003;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

struct FormatChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
};

double decode_sample(const unsigned char* p, const FormatChunk& fmt) {
  if (fmt.format == kFormatFloat) {
    if (fmt.bits == 32) {
      std::uint32_t raw = read_u32(p);
      float f;
      std::memcpy(&f, &raw, sizeof f);
      return f;
    }
    std::uint64_t raw = static_cast<std::uint64_t>(read_u32(p)) |
                        (static_cast<std::uint64_t>(read_u32(p + 4)) << 32);
    double d;
    std::memcpy(&d, &raw, sizeof d);
    return d;
  }
  switch (fmt.bits) {
    case 8:
      return (static_cast<int>(p[0]) - 128) / 128.0;
    case 16:
      return static_cast<std::int16_t>(read_u16(p)) / 32768.0;
    case 24: {
      std::int32_t v = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
      if (v & 0x800000) v -= 0x1000000;
      return v / 8388608.0;
    }
    default:
      return static_cast<std::int32_t>(read_u32(p)) / 2147483648.0;
  }
}

// Windowed-sinc taps for one polyphase branch, normalized to unit DC gain.
std::vector<double> branch_taps(double frac, int half_width, double cutoff, double beta) {
  std::vector<double> taps(2 * half_width);
  const double i0_beta = std::cyl_bessel_i(0.0, beta);
  for (int k = 0; k < 2 * half_width; ++k) {
    // distance from the output instant to input sample (base - half_width + 1 + k)
    const double x = frac + static_cast<double>(half_width - 1 - k);
    const double arg = 2.0 * cutoff * x;
    const double sinc =
        std::abs(arg) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
    const double r = x / half_width;
    const double win =
        std::abs(r) >= 1.0 ? 0.0 : std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - r * r)) / i0_beta;
    taps[k] = sinc * win;
  }
  const double sum = std::accumulate(taps.begin(), taps.end(), 0.0);
  if (sum != 0.0)
    for (double& t : taps) t /= sum;
  return taps;
}

}  // namespace

Waveform decode_wav(std::span<const unsigned char> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw Error("unsupported/corrupt container: missing RIFF/WAVE header");

  FormatChunk fmt;
  bool have_fmt = false;
  std::span<const unsigned char> data;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || avail < 16) throw Error("unsupported/corrupt container: truncated fmt chunk");
      const unsigned char* f = bytes.data() + body;
      fmt.format = read_u16(f);
      fmt.channels = read_u16(f + 2);
      fmt.sample_rate = read_u32(f + 4);
      fmt.bits = read_u16(f + 14);
      if (fmt.format == kFormatExtensible) {
        if (size < 26 || avail < 26)
          throw Error("unsupported/corrupt container: truncated extensible fmt chunk");
        fmt.format = read_u16(f + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      // tolerate writers that leave the data size unpatched
      data = bytes.subspan(body, std::min<std::size_t>(size, avail));
      have_data = true;
      break;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt || !have_data)
    throw Error("unsupported/corrupt container: missing fmt or data chunk");
  if (fmt.channels == 0 || fmt.sample_rate == 0)
    throw Error("unsupported/corrupt container: zero channels or sample rate");

  const bool pcm_ok = fmt.format == kFormatPcm &&
                      (fmt.bits == 8 || fmt.bits == 16 || fmt.bits == 24 || fmt.bits == 32);
  const bool float_ok = fmt.format == kFormatFloat && (fmt.bits == 32 || fmt.bits == 64);
  if (!pcm_ok && !float_ok)
    throw Error("unsupported encoding: format tag " + std::to_string(fmt.format) + " with " +
                std::to_string(fmt.bits) + " bits per sample");

  const std::size_t sample_bytes = fmt.bits / 8;
  const std::size_t frame_bytes = sample_bytes * fmt.channels;
  const std::size_t frames = data.size() / frame_bytes;

  Waveform w;
  w.sample_rate = static_cast<int>(fmt.sample_rate);
  w.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const unsigned char* frame = data.data() + i * frame_bytes;
    double acc = 0.0;
    for (std::size_t c = 0; c < fmt.channels; ++c) acc += decode_sample(frame + c * sample_bytes, fmt);
    w.samples[i] = acc / fmt.channels;
  }
  return w;
}

Waveform load_audio(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read audio file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  std::string out;
  out.reserve(44 + 4 * static_cast<std::size_t>(n));
  out += "RIFF";
  put_u32(out, 36 + 4 * n);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, kFormatFloat);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 4);
  put_u16(out, 4);
  put_u16(out, 32);
  out += "data";
  put_u32(out, 4 * n);
  for (double s : w.samples) {
    const float f = static_cast<float>(s);
    std::uint32_t raw;
    std::memcpy(&raw, &f, sizeof raw);
    put_u32(out, raw);
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error("cannot write audio file: " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error("write failed: " + path.string());
}

Waveform resample(const Waveform& w, int target_rate) {
  if (target_rate <= 0) throw Error("resample: target rate must be positive");
  if (target_rate == w.sample_rate) return w;

  const long g = std::gcd(static_cast<long>(target_rate), static_cast<long>(w.sample_rate));
  const long up = target_rate / g;
  const long down = w.sample_rate / g;

  // cutoff in cycles per input sample, slightly below the lower Nyquist
  const double cutoff = 0.5 * std::min(1.0, static_cast<double>(up) / down) * 0.94;
  const int half_width = static_cast<int>(std::ceil(12.0 / (2.0 * cutoff)));
  constexpr double kKaiserBeta = 8.6;

  std::vector<std::vector<double>> branches(static_cast<std::size_t>(up));
  for (long p = 0; p < up; ++p)
    branches[p] = branch_taps(static_cast<double>(p) / up, half_width, cutoff, kKaiserBeta);

  const long n_in = static_cast<long>(w.samples.size());
  const long n_out = (n_in * up + down - 1) / down;
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(n_out));
  for (long j = 0; j < n_out; ++j) {
    const long num = j * down;
    const long base = num / up;
    const auto& taps = branches[static_cast<std::size_t>(num % up)];
    double acc = 0.0;
    const long first = base - half_width + 1;
    for (int k = 0; k < 2 * half_width; ++k) {
      const long i = first + k;
      if (i >= 0 && i < n_in) acc += taps[k] * w.samples[static_cast<std::size_t>(i)];
    }
    out.samples[static_cast<std::size_t>(j)] = acc;
  }
  return out;
}

double rms(std::span<const double> samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (double s : samples) acc += s * s;
  return std::sqrt(acc / static_cast<double>(samples.size()));
}

}  // namespace sedforest
