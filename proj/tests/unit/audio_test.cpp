#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <random>

#include "sqac/audio/features.hpp"
#include "sqac/audio/wav.hpp"
#include "sqac/error.hpp"
#include "support/tempdir.hpp"

namespace {

namespace audio = sqac::audio;
using sqac::testing::TempDir;

std::vector<float> sine(double hz, std::size_t n, int rate, double amp = 1.0) {
  std::vector<float> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * i / rate));
  return x;
}

std::vector<float> white(std::size_t n, unsigned seed, double std = 0.1) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0.0, std);
  std::vector<float> x(n);
  for (float& v : x) v = static_cast<float>(g(rng));
  return x;
}

// Direct O(N^2) DFT of one Hann-windowed frame, in double precision.
std::vector<std::complex<double>> naive_frame_dft(const std::vector<float>& x, std::size_t start) {
  const std::size_t n = audio::kFftSize;
  std::vector<std::complex<double>> out(audio::kBins);
  for (std::size_t k = 0; k < audio::kBins; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
      acc += w * x[start + i] * std::polar(1.0, -2.0 * std::numbers::pi * double(k) * double(i) / n);
    }
    out[k] = acc;
  }
  return out;
}

TEST(Wav, SixteenKilohertzMonoIsIdentity) {
  TempDir dir;
  const auto x = white(16000, 1);
  audio::write_wav(dir / "a.wav", x);
  const auto clip = audio::load_wav(dir / "a.wav");
  ASSERT_EQ(clip.samples.size(), 16000u);
  EXPECT_EQ(clip.sample_rate, 16000);
  EXPECT_EQ(clip.clip_id, "a");
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(clip.samples[i], x[i], 1.0 / 32768.0 + 1e-7);
}

TEST(Wav, FortyEightKilohertzDownsamplesThreeToOne) {
  TempDir dir;
  audio::write_wav_raw(dir / "b.wav", sine(440.0, 48000, 48000, 0.5), 1, 48000, audio::SampleFormat::kPcm16);
  const auto clip = audio::load_wav(dir / "b.wav");
  EXPECT_NEAR(static_cast<double>(clip.samples.size()), 16000.0, 1.0);
  // Passband content survives resampling.
  const auto ref = sine(440.0, clip.samples.size(), 16000, 0.5);
  double err = 0.0;
  for (std::size_t i = 200; i + 200 < ref.size(); ++i) err = std::max(err, std::abs(double(clip.samples[i]) - ref[i]));
  EXPECT_LT(err, 5e-3);
}

TEST(Wav, OpposedStereoChannelsCancel) {
  TempDir dir;
  const auto x = white(4000, 2);
  std::vector<float> inter;
  for (float v : x) {
    inter.push_back(v);
    inter.push_back(-v);
  }
  audio::write_wav_raw(dir / "s.wav", inter, 2, 16000, audio::SampleFormat::kFloat32);
  const auto clip = audio::load_wav(dir / "s.wav");
  ASSERT_EQ(clip.samples.size(), 4000u);
  for (float v : clip.samples) EXPECT_EQ(v, 0.0f);
}

TEST(Wav, AllSampleFormatsDecode) {
  TempDir dir;
  const auto x = sine(300.0, 1600, 16000, 0.7);
  const std::pair<audio::SampleFormat, double> cases[] = {{audio::SampleFormat::kPcm16, 1.0 / 32768},
                                                          {audio::SampleFormat::kPcm24, 1.0 / 8388608},
                                                          {audio::SampleFormat::kPcm32, 1e-7},
                                                          {audio::SampleFormat::kFloat32, 1e-7}};
  for (const auto& [fmt, tol] : cases) {
    audio::write_wav_raw(dir / "f.wav", x, 1, 16000, fmt);
    const auto clip = audio::load_wav(dir / "f.wav");
    ASSERT_EQ(clip.samples.size(), x.size());
    for (std::size_t i = 0; i < x.size(); ++i) ASSERT_NEAR(clip.samples[i], x[i], tol + 1e-7);
  }
}

TEST(Wav, PeakNormalizationIsOptIn) {
  TempDir dir;
  audio::write_wav(dir / "q.wav", sine(200.0, 1600, 16000, 0.25));
  const auto raw = audio::load_wav(dir / "q.wav");
  EXPECT_NEAR(*std::max_element(raw.samples.begin(), raw.samples.end()), 0.25, 1e-3);
  const auto norm = audio::load_wav(dir / "q.wav", {.peak_normalize = true});
  float peak = 0.0f;
  for (float v : norm.samples) peak = std::max(peak, std::abs(v));
  EXPECT_NEAR(peak, 1.0f, 1e-6);
}

TEST(Wav, ErrorsNameThePath) {
  TempDir dir;
  const auto missing = dir / "missing.wav";
  try {
    audio::load_wav(missing);
    FAIL();
  } catch (const sqac::IoError& e) {
    EXPECT_NE(std::string(e.what()).find("missing.wav"), std::string::npos);
  }
  {
    std::ofstream(dir / "junk.wav") << "definitely not audio";
  }
  EXPECT_THROW(audio::load_wav(dir / "junk.wav"), sqac::FormatError);
}

TEST(Wav, RejectsUnsupportedEncoding) {
  TempDir dir;
  audio::write_wav(dir / "c.wav", sine(200.0, 400, 16000, 0.5));
  // Patch the format tag to A-law (6).
  std::fstream f(dir / "c.wav", std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(20);
  const char alaw[2] = {6, 0};
  f.write(alaw, 2);
  f.close();
  try {
    audio::load_wav(dir / "c.wav");
    FAIL();
  } catch (const sqac::FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported"), std::string::npos);
  }
}

TEST(Stft, FrameCountDropsPartialFrames) {
  EXPECT_EQ(audio::frame_count(16000), 99u);
  EXPECT_EQ(audio::frame_count(320), 1u);
  EXPECT_EQ(audio::frame_count(479), 1u);
  EXPECT_EQ(audio::frame_count(480), 2u);
  const auto s = audio::stft(white(16000, 3));
  EXPECT_EQ(s.frames, 99u);
  EXPECT_EQ(s.bins, 161u);
}

TEST(Stft, ShortClipAsksForZeroPadding) {
  std::vector<float> x(319, 0.1f);
  try {
    audio::stft(x);
    FAIL();
  } catch (const sqac::Error& e) {
    EXPECT_NE(std::string(e.what()).find("zero-pad"), std::string::npos);
  }
}

TEST(Stft, MatchesDirectDft) {
  const auto x = white(1600, 4, 0.3);
  const auto s = audio::stft(x);
  for (std::size_t f : {std::size_t{0}, std::size_t{3}, s.frames - 1}) {
    const auto ref = naive_frame_dft(x, f * audio::kHop);
    for (std::size_t k = 0; k < audio::kBins; ++k) {
      EXPECT_NEAR(s.re[k * s.frames + f], ref[k].real(), 2e-4);
      EXPECT_NEAR(s.im[k * s.frames + f], ref[k].imag(), 2e-4);
    }
  }
}

TEST(Stft, OneKilohertzSinePeaksAtBinTwenty) {
  const auto s = audio::stft(sine(1000.0, 16000, 16000));
  for (std::size_t f = 0; f < s.frames; ++f) {
    std::size_t best = 0;
    double best_mag = -1.0;
    for (std::size_t k = 0; k < s.bins; ++k) {
      const double m = std::hypot(s.re[k * s.frames + f], s.im[k * s.frames + f]);
      if (m > best_mag) best_mag = m, best = k;
    }
    ASSERT_EQ(best, 20u) << "frame " << f;
  }
}

TEST(Stft, SilenceGivesZeroFeatures) {
  const std::vector<float> x(16000, 0.0f);
  const auto t = audio::extract_features(x);
  ASSERT_EQ(t.shape(), (sqac::Shape{2, 161, 99}));
  for (float v : t.data()) ASSERT_EQ(v, 0.0f);
}

TEST(Stft, WhiteNoiseEnergyMatchesTimeDomain) {
  const auto x = white(16000, 5);
  const auto s = audio::stft(x);
  double spec_energy = 0.0;
  for (std::size_t k = 0; k < s.bins; ++k) {
    const double weight = (k == 0 || k == s.bins - 1) ? 1.0 : 2.0;  // one-sided spectrum
    for (std::size_t f = 0; f < s.frames; ++f) {
      const double re = s.re[k * s.frames + f], im = s.im[k * s.frames + f];
      spec_energy += weight * (re * re + im * im);
    }
  }
  spec_energy /= static_cast<double>(audio::kFftSize);
  double time_energy = 0.0;
  for (float v : x) time_energy += double(v) * v;
  // Periodic Hann: mean(w^2) = 3/8, and each sample is covered by N/hop = 2 frames.
  const double overlap_gain = 0.375 * static_cast<double>(audio::kFftSize) / audio::kHop;
  EXPECT_NEAR(spec_energy / (time_energy * overlap_gain), 1.0, 0.05);
}

TEST(Compress, KnownValues) {
  audio::Spectrogram s;
  s.bins = 3;
  s.frames = 1;
  s.re = {1.0f, 0.0f, 0.0f};
  s.im = {0.0f, 0.0f, 4.0f};
  const auto c = audio::compress(s, 0.3f);
  EXPECT_FLOAT_EQ(c.re[0], 1.0f);
  EXPECT_FLOAT_EQ(c.im[0], 0.0f);
  EXPECT_EQ(c.re[1], 0.0f);
  EXPECT_EQ(c.im[1], 0.0f);
  EXPECT_NEAR(c.re[2], 0.0f, 1e-7);
  EXPECT_NEAR(c.im[2], std::pow(4.0, 0.3), 1e-5);
  EXPECT_NEAR(c.im[2], 1.5157, 1e-4);
}

TEST(Compress, MonotoneInMagnitudeAndPreservesPhase) {
  std::mt19937 rng(6);
  std::uniform_real_distribution<float> u(-3.0f, 3.0f);
  audio::Spectrogram s;
  s.bins = 500;
  s.frames = 1;
  for (int i = 0; i < 500; ++i) {
    s.re.push_back(u(rng));
    s.im.push_back(u(rng));
  }
  const auto c = audio::compress(s);
  for (std::size_t i = 0; i < 500; ++i) {
    const double a = std::atan2(s.im[i], s.re[i]), b = std::atan2(c.im[i], c.re[i]);
    EXPECT_NEAR(a, b, 1e-5);
  }
  for (std::size_t i = 0; i + 1 < 500; ++i) {
    const double m1 = std::hypot(s.re[i], s.im[i]), m2 = std::hypot(s.re[i + 1], s.im[i + 1]);
    const double c1 = std::hypot(c.re[i], c.im[i]), c2 = std::hypot(c.re[i + 1], c.im[i + 1]);
    if (m1 < m2) {
      EXPECT_LT(c1, c2);
    } else if (m2 < m1) {
      EXPECT_LT(c2, c1);
    }
  }
}

TEST(Features, LayoutIsRealThenImaginary) {
  const auto x = white(960, 7);
  const auto c = audio::compress(audio::stft(x));
  const auto t = audio::to_feature_tensor(c);
  ASSERT_EQ(t.shape(), (sqac::Shape{2, 161, 5}));
  EXPECT_EQ(t.data()[7 * 5 + 2], c.re[7 * 5 + 2]);
  EXPECT_EQ(t.data()[161 * 5 + 7 * 5 + 2], c.im[7 * 5 + 2]);
}

}  // namespace
