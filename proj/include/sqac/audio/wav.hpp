#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace sqac::synth {
struct DegradationSpec;
}

namespace sqac::audio {

inline constexpr int kSampleRate = 16000;

// Mono waveform. After load_wav the rate is always kSampleRate and every
// sample lies in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
  std::string clip_id;
  std::shared_ptr<const synth::DegradationSpec> degradation;  // provenance, optional
};

struct WavLoadOptions {
  bool peak_normalize = false;  // scale so max |sample| == 1
};

// Reads RIFF/WAVE PCM (16/24/32-bit integer) or IEEE float32, averages
// channels, and resamples to 16 kHz. Throws FormatError for corrupt or
// unsupported files and IoError when the file cannot be read.
AudioClip load_wav(const std::filesystem::path& path, const WavLoadOptions& options = {});

// Writes 16-bit PCM mono. Values are clamped to [-1, 1] before quantizing.
void write_wav(const std::filesystem::path& path, const std::vector<float>& samples,
               int sample_rate = kSampleRate);

// Raw little-endian sample encodings accepted by write_wav_raw.
enum class SampleFormat { kPcm16, kPcm24, kPcm32, kFloat32 };

// Interleaved multichannel writer, mostly for exercising the loader.
void write_wav_raw(const std::filesystem::path& path, const std::vector<float>& interleaved,
                   int channels, int sample_rate, SampleFormat format);

// Band-limited (windowed-sinc) sample-rate conversion.
std::vector<float> resample(const std::vector<float>& input, int from_rate, int to_rate);

}  // namespace sqac::audio
