#include "sqac/audio/wav.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include "sqac/error.hpp"

namespace sqac::audio {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_tag(std::vector<unsigned char>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

double kaiser(double x, double beta) {
  // x in [-1, 1]
  if (std::abs(x) > 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - x * x)) / std::cyl_bessel_i(0.0, beta);
}

}  // namespace

AudioClip load_wav(const std::filesystem::path& path, const WavLoadOptions& options) {
  const auto bytes = read_file(path);
  auto fail = [&](const std::string& why) -> FormatError {
    return FormatError("'" + path.string() + "': " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw fail("not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  bool have_fmt = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      // Truncated data chunks are tolerated; anything else is corrupt.
      if (std::memcmp(chunk, "data", 4) != 0) throw fail("truncated chunk");
    }
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw fail("fmt chunk too short");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == kFormatExtensible) {
        if (avail < 40) throw fail("extensible fmt chunk too short");
        format = read_u16(chunk + 8 + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = avail;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  if (channels == 0 || rate == 0) throw fail("invalid channel count or sample rate");

  const bool pcm = format == kFormatPcm && (bits == 16 || bits == 24 || bits == 32);
  const bool flt = format == kFormatFloat && bits == 32;
  if (!pcm && !flt)
    throw fail("unsupported encoding (format " + std::to_string(format) + ", " +
               std::to_string(bits) + " bits)");

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frames = data_size / (bytes_per_sample * channels);
  std::vector<float> mono(frames, 0.0f);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (f * channels + c) * bytes_per_sample;
      double v = 0.0;
      if (flt) {
        float x;
        std::uint32_t u = read_u32(p);
        std::memcpy(&x, &u, 4);
        v = x;
      } else if (bits == 16) {
        v = static_cast<std::int16_t>(read_u16(p)) / 32768.0;
      } else if (bits == 24) {
        std::int32_t x = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
        if (x & 0x800000) x -= 0x1000000;
        v = x / 8388608.0;
      } else {
        v = static_cast<std::int32_t>(read_u32(p)) / 2147483648.0;
      }
      acc += v;
    }
    mono[f] = static_cast<float>(acc / channels);
  }
  for (float v : mono)
    if (!std::isfinite(v)) throw fail("non-finite sample");

  AudioClip clip;
  clip.samples = resample(mono, static_cast<int>(rate), kSampleRate);
  clip.sample_rate = kSampleRate;
  clip.clip_id = path.stem().string();
  float peak = 0.0f;
  for (float& v : clip.samples) {
    v = std::clamp(v, -1.0f, 1.0f);
    peak = std::max(peak, std::abs(v));
  }
  if (options.peak_normalize && peak > 0.0f)
    for (float& v : clip.samples) v /= peak;
  return clip;
}

void write_wav_raw(const std::filesystem::path& path, const std::vector<float>& interleaved,
                   int channels, int sample_rate, SampleFormat format) {
  const std::uint16_t bits = format == SampleFormat::kPcm16 ? 16 : format == SampleFormat::kPcm24 ? 24 : 32;
  const std::uint16_t tag = format == SampleFormat::kFloat32 ? kFormatFloat : kFormatPcm;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(interleaved.size() * (bits / 8));
  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, tag);
  put_u16(out, static_cast<std::uint16_t>(channels));
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate * channels * (bits / 8)));
  put_u16(out, static_cast<std::uint16_t>(channels * (bits / 8)));
  put_u16(out, bits);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (float s : interleaved) {
    const double x = std::clamp(static_cast<double>(s), -1.0, 1.0);
    switch (format) {
      case SampleFormat::kPcm16:
        put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(x * 32767.0))));
        break;
      case SampleFormat::kPcm24: {
        const std::int32_t v = static_cast<std::int32_t>(std::lround(x * 8388607.0));
        for (int i = 0; i < 3; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
        break;
      }
      case SampleFormat::kPcm32:
        put_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(std::llround(x * 2147483647.0))));
        break;
      case SampleFormat::kFloat32: {
        const float f = static_cast<float>(s);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        put_u32(out, u);
        break;
      }
    }
  }
  write_file(path, out);
}

void write_wav(const std::filesystem::path& path, const std::vector<float>& samples, int sample_rate) {
  write_wav_raw(path, samples, 1, sample_rate, SampleFormat::kPcm16);
}

std::vector<float> resample(const std::vector<float>& input, int from_rate, int to_rate) {
  if (from_rate <= 0 || to_rate <= 0) throw Error("resample: rates must be positive");
  if (from_rate == to_rate || input.empty()) return input;

  const std::size_t out_len = static_cast<std::size_t>(
      static_cast<std::uint64_t>(input.size()) * static_cast<std::uint64_t>(to_rate) /
      static_cast<std::uint64_t>(from_rate));
  const double ratio = static_cast<double>(from_rate) / to_rate;  // input samples per output
  // Cutoff in cycles per input sample, slightly under the lower Nyquist.
  const double cutoff = 0.5 * std::min(1.0, 1.0 / ratio) * 0.95;
  constexpr double kZeroCrossings = 16.0;
  constexpr double kBeta = 8.0;
  const double half_width = kZeroCrossings / (2.0 * cutoff);

  std::vector<float> out(out_len);
  const long n_in = static_cast<long>(input.size());
  for (std::size_t n = 0; n < out_len; ++n) {
    const double t = static_cast<double>(n) * ratio;
    const long lo = static_cast<long>(std::ceil(t - half_width));
    const long hi = static_cast<long>(std::floor(t + half_width));
    double acc = 0.0, wsum = 0.0;
    for (long k = std::max(lo, 0L); k <= std::min(hi, n_in - 1); ++k) {
      const double tau = static_cast<double>(k) - t;
      const double arg = 2.0 * cutoff * tau;
      const double sinc = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
      const double w = 2.0 * cutoff * sinc * kaiser(tau / half_width, kBeta);
      acc += w * input[static_cast<std::size_t>(k)];
      wsum += w;
    }
    out[n] = static_cast<float>(wsum != 0.0 ? acc / wsum : 0.0);
  }
  return out;
}

}  // namespace sqac::audio
