#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace sqac::synth {

// Parametric stand-in for a real-world degradation chain. Absent fields are
// not applied.
struct DegradationSpec {
  std::optional<double> snr_db;
  std::optional<double> bandwidth_hz;    // (0, 8000]
  std::optional<double> clip_threshold;  // (0, 1]
  std::optional<double> dropout;         // frame-erasure rate in [0, 1)
  std::uint64_t seed = 0;

  bool is_clean() const { return !snr_db && !bandwidth_hz && !clip_threshold && !dropout; }
  void validate() const;  // throws ConfigError
  bool operator==(const DegradationSpec&) const = default;
};

struct DegradationSampler {
  double noise_probability = 0.67;
  double snr_mean_db = 10.0;
  double snr_std_db = 3.1622776601683795;  // variance 10 dB^2
  double bandwidth_probability = 0.5;
  std::vector<double> bandwidth_choices_hz{2000.0, 4000.0, 6000.0};
  double clip_probability = 0.25;
  double clip_min = 0.1;
  double clip_max = 0.5;
  double dropout_probability = 0.25;
  double dropout_min = 0.02;
  double dropout_max = 0.2;
};

DegradationSpec sample_degradation(std::mt19937_64& rng, const DegradationSampler& sampler = {});

// Applies, in order: linear-phase low-pass, white noise at the target SNR
// (measured against the band-limited signal), hard clipping, and zeroing of
// random 20 ms frames. Rescales only if a sample leaves [-1, 1].
std::vector<float> apply_degradation(const std::vector<float>& clean, const DegradationSpec& spec);

// Linear-phase Kaiser-windowed FIR low-pass, same-length output.
std::vector<float> lowpass(const std::vector<float>& x, double cutoff_hz, int sample_rate = 16000);

// Logit-domain rating bias of a synthetic dataset: mos = 1 + 4 sigmoid(a*z + b).
struct OracleParams {
  double scale = 1.0;
  double shift = 0.0;
  bool operator==(const OracleParams&) const = default;
};

double oracle_penalty(const DegradationSpec& spec);

// Analytic quality in [1, 5]; an undegraded spec is exactly 5.
double oracle_mos(const DegradationSpec& spec, const OracleParams& params = {});

}  // namespace sqac::synth
