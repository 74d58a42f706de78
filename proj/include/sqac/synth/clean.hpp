#pragma once

#include <cstdint>
#include <vector>

namespace sqac::synth {

enum class VoiceStyle {
  kNatural,    // drifting pitch, varied formants
  kGenerated,  // flat prosody, stand-in for synthetic (TTS) speech
};

// Deterministic speech-like signal at 16 kHz: a band-limited glottal pulse
// train (f0 within 80-300 Hz) through three slowly moving formant resonators,
// gated into syllable-like bursts, peak-normalized to 0.5.
// duration_s must lie in [1, 30].
std::vector<float> synth_clean(std::uint64_t seed, double duration_s,
                               VoiceStyle style = VoiceStyle::kNatural);

// Magnitude-weighted mean frequency of a signal, in Hz.
double spectral_centroid(const std::vector<float>& x, int sample_rate = 16000);

}  // namespace sqac::synth
