#include "sqac/synth/clean.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "sqac/audio/features.hpp"
#include "sqac/error.hpp"

namespace sqac::synth {
namespace {

constexpr double kRate = 16000.0;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::size_t kControlBlock = 80;  // resonator coefficients refresh every 5 ms

struct Formants {
  double f[3];
};

Formants draw_formants(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> f1(300.0, 800.0), f2(900.0, 2300.0), f3(2400.0, 3200.0);
  return {{f1(rng), f2(rng), f3(rng)}};
}

// Two-pole resonator normalized to unity gain at DC.
struct Resonator {
  double a1 = 0.0, a2 = 0.0, g = 1.0, y1 = 0.0, y2 = 0.0;

  void tune(double freq, double bandwidth) {
    const double r = std::exp(-std::numbers::pi * bandwidth / kRate);
    a1 = 2.0 * r * std::cos(kTwoPi * freq / kRate);
    a2 = -r * r;
    g = 1.0 - a1 - a2;
  }
  double step(double x) {
    const double y = g * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

// Syllable gain envelope plus the formant target each syllable moves toward.
struct Syllable {
  std::size_t start, length;
  Formants target;
};

std::vector<Syllable> plan_syllables(std::mt19937_64& rng, std::size_t n, VoiceStyle style) {
  const bool natural = style == VoiceStyle::kNatural;
  std::uniform_real_distribution<double> len(natural ? 0.12 : 0.16, natural ? 0.30 : 0.20);
  std::uniform_real_distribution<double> gap(natural ? 0.03 : 0.05, natural ? 0.15 : 0.07);
  std::vector<Syllable> out;
  std::size_t cursor = static_cast<std::size_t>(gap(rng) * kRate * 0.5);
  while (cursor < n) {
    const auto l = static_cast<std::size_t>(len(rng) * kRate);
    out.push_back({cursor, std::min(l, n - cursor), draw_formants(rng)});
    cursor += l + static_cast<std::size_t>(gap(rng) * kRate);
  }
  return out;
}

}  // namespace

std::vector<float> synth_clean(std::uint64_t seed, double duration_s, VoiceStyle style) {
  if (!(duration_s >= 1.0 && duration_s <= 30.0))
    throw ConfigError("synth_clean: duration_s must lie in [1, 30], got " + std::to_string(duration_s));
  const auto n = static_cast<std::size_t>(std::lround(duration_s * kRate));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool natural = style == VoiceStyle::kNatural;

  const double f0_base = natural ? 100.0 + 100.0 * unit(rng) : 110.0 + 70.0 * unit(rng);
  const double slow_depth = natural ? 0.15 : 0.03;
  const double slow_rate = 0.3 + 0.9 * unit(rng);
  const double slow_phase = kTwoPi * unit(rng);
  const double fast_depth = natural ? 0.08 : 0.0;
  const double fast_rate = 2.0 + 3.0 * unit(rng);
  const double fast_phase = kTwoPi * unit(rng);
  const double aspiration = natural ? 0.05 : 0.02;

  std::vector<double> envelope(n, 0.0);
  std::vector<Formants> targets(n);
  Formants previous = draw_formants(rng);
  for (const Syllable& s : plan_syllables(rng, n, style)) {
    for (std::size_t i = 0; i < s.length; ++i) {
      const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(s.length);
      const double w = std::sin(std::numbers::pi * u);
      envelope[s.start + i] = w * w;
      for (int k = 0; k < 3; ++k) targets[s.start + i].f[k] = previous.f[k] + u * (s.target.f[k] - previous.f[k]);
    }
    previous = s.target;
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  Resonator res[3];
  const double bandwidths[3] = {80.0, 120.0, 160.0};
  double phase = 0.0, tilt = 0.0;
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kRate;
    double f0 = f0_base * (1.0 + slow_depth * std::sin(kTwoPi * slow_rate * t + slow_phase) +
                           fast_depth * std::sin(kTwoPi * fast_rate * t + fast_phase));
    f0 = std::clamp(f0, 80.0, 300.0);
    phase = std::fmod(phase + kTwoPi * f0 / kRate, kTwoPi);

    // Band-limited impulse train: equal-amplitude harmonics below 7.6 kHz.
    const double harmonics = std::floor(7600.0 / f0);
    const double denom = std::sin(0.5 * phase);
    const double pulse = std::abs(denom) < 1e-9 ? harmonics
                                                : std::sin((harmonics + 0.5) * phase) / (2.0 * denom) - 0.5;
    tilt = 0.9 * tilt + 0.1 * (pulse / harmonics + aspiration * gauss(rng));

    if (i % kControlBlock == 0 && envelope[i] > 0.0)
      for (int k = 0; k < 3; ++k) res[k].tune(targets[i].f[k], bandwidths[k]);
    double y = tilt;
    for (auto& r : res) y = r.step(y);
    out[i] = static_cast<float>(y * envelope[i]);
  }

  float peak = 0.0f;
  for (float v : out) peak = std::max(peak, std::abs(v));
  if (peak > 0.0f)
    for (float& v : out) v *= 0.5f / peak;
  return out;
}

double spectral_centroid(const std::vector<float>& x, int sample_rate) {
  const audio::Spectrogram s = audio::stft(x);
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < s.bins; ++k) {
    const double hz = static_cast<double>(k) * sample_rate / static_cast<double>(audio::kFftSize);
    for (std::size_t f = 0; f < s.frames; ++f) {
      const double m = std::hypot(s.re[k * s.frames + f], s.im[k * s.frames + f]);
      num += hz * m;
      den += m;
    }
  }
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace sqac::synth
