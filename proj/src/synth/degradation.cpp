#include "sqac/synth/degradation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sqac/error.hpp"
#include "sqac/simd/kernels.hpp"

namespace sqac::synth {
namespace {

constexpr std::size_t kDropoutFrame = 320;  // 20 ms at 16 kHz
constexpr int kLowpassHalfTaps = 100;
constexpr double kKaiserBeta = 5.65;  // ~60 dB stopband

// Independent generator streams derived from one spec seed.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id)};
  return std::mt19937_64(seq);
}

double mean_square(const std::vector<float>& x) {
  double s = 0.0;
  for (float v : x) s += static_cast<double>(v) * v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void DegradationSpec::validate() const {
  if (bandwidth_hz && (*bandwidth_hz <= 0.0 || *bandwidth_hz > 8000.0))
    throw ConfigError("degradation: bandwidth_hz must lie in (0, 8000]");
  if (clip_threshold && (*clip_threshold <= 0.0 || *clip_threshold > 1.0))
    throw ConfigError("degradation: clip_threshold must lie in (0, 1]");
  if (dropout && (*dropout < 0.0 || *dropout >= 1.0))
    throw ConfigError("degradation: dropout must lie in [0, 1)");
  if (snr_db && !std::isfinite(*snr_db)) throw ConfigError("degradation: snr_db must be finite");
}

DegradationSpec sample_degradation(std::mt19937_64& rng, const DegradationSampler& s) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  DegradationSpec spec;
  spec.seed = rng();
  if (unit(rng) < s.noise_probability) {
    // A zero spread degenerates to the mean exactly.
    spec.snr_db = s.snr_std_db > 0.0
                      ? std::normal_distribution<double>(s.snr_mean_db, s.snr_std_db)(rng)
                      : s.snr_mean_db;
  }
  if (unit(rng) < s.bandwidth_probability && !s.bandwidth_choices_hz.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, s.bandwidth_choices_hz.size() - 1);
    spec.bandwidth_hz = s.bandwidth_choices_hz[pick(rng)];
  }
  if (unit(rng) < s.clip_probability)
    spec.clip_threshold = std::uniform_real_distribution<double>(s.clip_min, s.clip_max)(rng);
  if (unit(rng) < s.dropout_probability)
    spec.dropout = std::uniform_real_distribution<double>(s.dropout_min, s.dropout_max)(rng);
  return spec;
}

std::vector<float> lowpass(const std::vector<float>& x, double cutoff_hz, int sample_rate) {
  const double fc = cutoff_hz / sample_rate;  // cycles per sample
  const int m = kLowpassHalfTaps;
  std::vector<float> taps(2 * m + 1);
  const double i0b = std::cyl_bessel_i(0.0, kKaiserBeta);
  double sum = 0.0;
  for (int n = -m; n <= m; ++n) {
    const double arg = 2.0 * fc * n;
    const double sinc = n == 0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
    const double r = static_cast<double>(n) / m;
    const double w = std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - r * r)) / i0b;
    taps[n + m] = static_cast<float>(2.0 * fc * sinc * w);
    sum += taps[n + m];
  }
  for (float& t : taps) t = static_cast<float>(t / sum);

  // Zero-padded so the output is aligned (delay compensated) with the input.
  std::vector<float> padded(x.size() + 2 * m, 0.0f);
  std::copy(x.begin(), x.end(), padded.begin() + m);
  std::vector<float> y(x.size());
  const auto& kt = simd::kernels();
  for (std::size_t n = 0; n < x.size(); ++n) y[n] = kt.dot(taps.size(), padded.data() + n, taps.data());
  return y;
}

std::vector<float> apply_degradation(const std::vector<float>& clean, const DegradationSpec& spec) {
  spec.validate();
  std::vector<float> y = clean;
  if (spec.bandwidth_hz && *spec.bandwidth_hz < 8000.0) y = lowpass(y, *spec.bandwidth_hz);

  if (spec.snr_db) {
    const double p_signal = mean_square(y);
    if (p_signal > 0.0) {
      auto rng = stream(spec.seed, 1);
      std::normal_distribution<float> gauss(0.0f, 1.0f);
      std::vector<float> noise(y.size());
      for (float& v : noise) v = gauss(rng);
      const double p_noise = mean_square(noise);
      const double target = p_signal / std::pow(10.0, *spec.snr_db / 10.0);
      const float gain = static_cast<float>(std::sqrt(target / p_noise));
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += gain * noise[i];
    }
  }

  if (spec.clip_threshold) {
    const float t = static_cast<float>(*spec.clip_threshold);
    for (float& v : y) v = std::clamp(v, -t, t);
  }

  if (spec.dropout && *spec.dropout > 0.0) {
    auto rng = stream(spec.seed, 2);
    std::bernoulli_distribution drop(*spec.dropout);
    for (std::size_t start = 0; start < y.size(); start += kDropoutFrame)
      if (drop(rng)) std::fill(y.begin() + start, y.begin() + std::min(y.size(), start + kDropoutFrame), 0.0f);
  }

  float peak = 0.0f;
  for (float v : y) peak = std::max(peak, std::abs(v));
  if (peak > 1.0f)
    for (float& v : y) v /= peak;
  return y;
}

double oracle_penalty(const DegradationSpec& spec) {
  double p = 0.0;
  if (spec.snr_db) p += std::max(0.0, (20.0 - *spec.snr_db) / 6.0);
  if (spec.bandwidth_hz) p += std::max(0.0, (8000.0 - *spec.bandwidth_hz) / 2500.0) * 0.8;
  if (spec.clip_threshold) p += std::max(0.0, 4.0 * (0.5 - *spec.clip_threshold));
  if (spec.dropout) p += 12.0 * *spec.dropout;
  return p;
}

double oracle_mos(const DegradationSpec& spec, const OracleParams& params) {
  if (spec.is_clean()) return 5.0;
  const double z = 2.2 - oracle_penalty(spec);
  return 1.0 + 4.0 * sigmoid(params.scale * z + params.shift);
}

}  // namespace sqac::synth
