#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sqac/audio/wav.hpp"
#include "sqac/tensor.hpp"

namespace sqac::audio {

inline constexpr std::size_t kFftSize = 320;
inline constexpr std::size_t kHop = 160;
inline constexpr std::size_t kBins = kFftSize / 2 + 1;  // 161

// One-sided complex spectrogram, bins x frames, row-major per bin.
struct Spectrogram {
  std::size_t bins = kBins;
  std::size_t frames = 0;
  std::vector<float> re;
  std::vector<float> im;
};

std::size_t frame_count(std::size_t num_samples);

// Periodic Hann window, 320-point real DFT, 160-sample hop, no centering and
// no partial final frame. Throws Error for clips shorter than one window.
Spectrogram stft(std::span<const float> samples);
inline Spectrogram stft(const AudioClip& clip) { return stft(clip.samples); }

// z = m e^{i phi}  ->  (m^c cos phi, m^c sin phi); 0 maps to 0.
Spectrogram compress(const Spectrogram& spec, float exponent = 0.3f);

// (2, 161, T) tensor: channel 0 compressed real part, channel 1 imaginary.
Tensor to_feature_tensor(const Spectrogram& compressed);

// stft -> compress -> to_feature_tensor.
Tensor extract_features(std::span<const float> samples, float exponent = 0.3f);

}  // namespace sqac::audio
