#include "sqac/audio/features.hpp"

#include <cmath>
#include <numbers>

#include "sqac/error.hpp"
#include "sqac/simd/kernels.hpp"

namespace sqac::audio {
namespace {

// Real DFT as a matrix product: frames (T x N) * basis (N x 161), with the
// analysis window folded into the basis rows.
struct DftBasis {
  std::vector<float> cos_part;  // N x bins
  std::vector<float> sin_part;  // N x bins, negated (e^{-i...})

  DftBasis() : cos_part(kFftSize * kBins), sin_part(kFftSize * kBins) {
    for (std::size_t n = 0; n < kFftSize; ++n) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / kFftSize);
      for (std::size_t k = 0; k < kBins; ++k) {
        // Reduce n*k modulo N before the trig call to keep the phase exact.
        const double phase = 2.0 * std::numbers::pi * static_cast<double>((n * k) % kFftSize) / kFftSize;
        cos_part[n * kBins + k] = static_cast<float>(w * std::cos(phase));
        sin_part[n * kBins + k] = static_cast<float>(-w * std::sin(phase));
      }
    }
  }
};

const DftBasis& basis() {
  static const DftBasis b;
  return b;
}

}  // namespace

std::size_t frame_count(std::size_t num_samples) {
  if (num_samples < kFftSize) return 0;
  return (num_samples - kFftSize) / kHop + 1;
}

Spectrogram stft(std::span<const float> samples) {
  if (samples.size() < kFftSize)
    throw Error("stft: clip has " + std::to_string(samples.size()) + " samples, fewer than one " +
                std::to_string(kFftSize) + "-sample window; zero-pad upstream");
  const std::size_t t = frame_count(samples.size());
  const auto& b = basis();
  const auto& kt = simd::kernels();

  std::vector<float> re_tf(t * kBins, 0.0f), im_tf(t * kBins, 0.0f);
  // Frames overlap by half, so each frame is a strided view of the input.
  kt.gemm_nn(t, kBins, kFftSize, samples.data(), kHop, b.cos_part.data(), kBins, re_tf.data(), kBins);
  kt.gemm_nn(t, kBins, kFftSize, samples.data(), kHop, b.sin_part.data(), kBins, im_tf.data(), kBins);

  Spectrogram s;
  s.frames = t;
  s.re.resize(kBins * t);
  s.im.resize(kBins * t);
  for (std::size_t f = 0; f < t; ++f)
    for (std::size_t k = 0; k < kBins; ++k) {
      s.re[k * t + f] = re_tf[f * kBins + k];
      s.im[k * t + f] = im_tf[f * kBins + k];
    }
  return s;
}

Spectrogram compress(const Spectrogram& spec, float exponent) {
  Spectrogram out = spec;
  for (std::size_t i = 0; i < spec.re.size(); ++i) {
    const float m = std::hypot(spec.re[i], spec.im[i]);
    if (m == 0.0f) {
      out.re[i] = 0.0f;
      out.im[i] = 0.0f;
      continue;
    }
    const float g = std::pow(m, exponent - 1.0f);
    out.re[i] = spec.re[i] * g;
    out.im[i] = spec.im[i] * g;
  }
  return out;
}

Tensor to_feature_tensor(const Spectrogram& compressed) {
  std::vector<float> values;
  values.reserve(2 * compressed.re.size());
  values.insert(values.end(), compressed.re.begin(), compressed.re.end());
  values.insert(values.end(), compressed.im.begin(), compressed.im.end());
  return Tensor({2, compressed.bins, compressed.frames}, std::move(values));
}

Tensor extract_features(std::span<const float> samples, float exponent) {
  return to_feature_tensor(compress(stft(samples), exponent));
}

}  // namespace sqac::audio
