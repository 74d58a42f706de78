#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

#include "sqac/error.hpp"
#include "sqac/model/bias.hpp"
#include "sqac/model/checkpoint.hpp"
#include "sqac/model/config.hpp"
#include "sqac/model/quality_model.hpp"
#include "sqac/ops.hpp"
#include "support/tempdir.hpp"

namespace {

namespace model = sqac::model;
using model::HeadConfig;
using model::QualityModel;
using model::StudentConfig;
using sqac::Tensor;
using sqac::testing::TempDir;

StudentConfig tiny_student() {
  StudentConfig c;
  c.base_channels = 2;
  c.max_channels = 4;
  c.num_conv_layers = 4;
  c.transformer_dim = 8;
  c.transformer_layers = 1;
  c.attention_heads = 2;
  return c;
}

HeadConfig small_head(bool pe) {
  HeadConfig h;
  h.dim = 8;
  h.layers = 2;
  h.heads = 2;
  h.positional_encoding = pe;
  return h;
}

Tensor random_tensor(sqac::Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  for (float& v : t.data()) v = g(rng);
  return t;
}

// Makes the pooling query non-zero so attention weights are not uniform.
void perturb_pool_query(QualityModel& m) {
  std::mt19937_64 rng(99);
  std::normal_distribution<float> g;
  for (float& v : m.parameter("head.pool.query").value.data()) v = g(rng);
}

double logit_of(const QualityModel& m, const Tensor& x) { return m.forward(x).item(); }

// ---- configuration and size accounting ----

TEST(VariantGrid, SizesStrictlyIncrease) {
  const auto& grid = model::variant_grid();
  ASSERT_EQ(grid.size(), 10u);
  for (std::size_t i = 1; i < grid.size(); ++i)
    EXPECT_GT(model::student_parameter_count(grid[i]), model::student_parameter_count(grid[i - 1])) << "v" << i + 1;
}

TEST(VariantGrid, AnalyticCountMatchesInstantiation) {
  for (const auto& cfg : model::variant_grid()) {
    const QualityModel m = QualityModel::student(cfg, 1);
    EXPECT_EQ(model::count_parameters(m, false), static_cast<double>(model::student_parameter_count(cfg)))
        << "v" << cfg.variant_id;
  }
}

TEST(VariantGrid, V7NearTableSize) {
  const QualityModel m = QualityModel::student(model::variant(7), 7);
  const double n = model::count_parameters(m, true);
  EXPECT_NEAR(n, 4.3e6, 0.43e6);
}

TEST(VariantGrid, ShippedFileMatchesBuiltInTable) {
  const auto loaded = model::load_variant_grid(std::filesystem::path(SQAC_SOURCE_DIR) / "configs" / "variants.ini");
  EXPECT_EQ(loaded, model::variant_grid());
}

TEST(VariantGrid, RejectsUnknownKeysAndBadIds) {
  TempDir dir;
  const auto path = dir / "grid.ini";
  std::ofstream(path) << "[v1]\nmax_channels = 128\nnum_conv_layers = 5\ntransformer_dim = 64\n"
                         "transformer_layers = 2\nwidth = 3\n";
  EXPECT_THROW(model::load_variant_grid(path), sqac::ConfigError);
  EXPECT_THROW(model::variant(0), sqac::ConfigError);
  EXPECT_THROW(model::variant(11), sqac::ConfigError);
}

TEST(StudentConfigTest, ValidationRejectsBadShapes) {
  StudentConfig c = model::variant(1);
  c.max_channels = 192;
  EXPECT_THROW(c.validate(), sqac::ConfigError);
  c = model::variant(1);
  c.transformer_dim = 66;
  EXPECT_THROW(c.validate(), sqac::ConfigError);
}

TEST(StudentConfigTest, FrequencyExtentHalvesWithCeil) {
  // Six layers: two stride-1 layers, then three (2,1) and a final (2,2).
  StudentConfig c = model::variant(7);
  const auto plan = model::conv_plan(c);
  ASSERT_EQ(plan.size(), 6u);
  std::size_t f = 161;
  std::vector<std::size_t> extents;
  for (const auto& l : plan) {
    f = (f + 2 - 3) / l.stride_h + 1;
    extents.push_back(f);
  }
  EXPECT_EQ(extents, (std::vector<std::size_t>{161, 161, 81, 41, 21, 11}));
  EXPECT_EQ(model::frequency_extent(c), 11u);
  EXPECT_EQ(plan.back().stride_w, 2u);
  EXPECT_EQ(plan[0].out_channels, 64u);
  EXPECT_EQ(plan[1].out_channels, 64u);
  EXPECT_EQ(plan[2].out_channels, 128u);
  EXPECT_EQ(plan.back().out_channels, 512u);
}

TEST(StudentConfigTest, ArchitectureStringRoundTrips) {
  for (const auto& cfg : model::variant_grid()) {
    const auto arch = model::Architecture::of(cfg);
    const auto back = model::Architecture::parse(arch.to_string());
    EXPECT_EQ(back.student, cfg);
  }
  const auto head = model::Architecture::of(small_head(false));
  EXPECT_EQ(model::Architecture::parse(head.to_string()).head, small_head(false));
  EXPECT_THROW(model::Architecture::parse("student dim=oops"), sqac::FormatError);
}

TEST(HeadCount, MatchesShapeArithmetic) {
  HeadConfig h;  // dim 32, 4 layers, 4 heads, ff 4x
  const std::size_t d = 32, ff = 128;
  const std::size_t per_layer = 4 * d + 4 * (d * d + d) + (d * ff + ff) + (ff * d + d);
  EXPECT_EQ(model::head_parameter_count(h), 4 * per_layer + d + d + 1);
  const QualityModel a = QualityModel::head_only(h, 1), b = QualityModel::head_only(h, 2);
  EXPECT_EQ(model::count_parameters(a, false), static_cast<double>(model::head_parameter_count(h)));
  EXPECT_EQ(model::count_parameters(a, false), model::count_parameters(b, false));
}

TEST(SparseAccounting, HandComputedCases) {
  EXPECT_EQ(model::sparse_cost(1000, 700), 1000.0);
  EXPECT_EQ(model::sparse_cost(1000, 200), 300.0);
  EXPECT_EQ(model::sparse_cost(1000, 0), 0.0);
}

TEST(SparseAccounting, MaskedTensorsOnly) {
  QualityModel m = QualityModel::student(tiny_student(), 3);
  const double dense = model::count_parameters(m, false);
  EXPECT_EQ(model::count_parameters(m, true), dense);
  auto& proj = m.parameter("embed.proj.weight");
  const std::size_t n = proj.value.numel();
  proj.mask.assign(n, 0);
  std::fill(proj.mask.begin(), proj.mask.begin() + static_cast<long>(n / 10), 1);
  const double expected = dense - static_cast<double>(n) + model::sparse_cost(n, n / 10);
  EXPECT_DOUBLE_EQ(model::count_parameters(m, true), expected);
  EXPECT_EQ(model::count_parameters(m, false), dense);
}

// ---- forward behaviour ----

TEST(StudentForward, OutputIsScalarAndDeterministic) {
  const QualityModel m = QualityModel::student(tiny_student(), 5);
  const Tensor x({2, 161, 20});
  const Tensor y = m.forward(x);
  EXPECT_EQ(y.shape(), (sqac::Shape{1}));
  EXPECT_EQ(y.item(), m.forward(x).item());
}

TEST(StudentForward, ZeroInputSeesOnlyFirstLayerBias) {
  QualityModel a = QualityModel::student(tiny_student(), 5);
  QualityModel b = a.clone();
  for (float& v : b.parameter("embed.conv0.weight").value.data()) v = 0.0f;
  const Tensor zeros({2, 161, 12});
  EXPECT_EQ(logit_of(a, zeros), logit_of(b, zeros));
  const Tensor noise = random_tensor({2, 161, 12}, 1);
  EXPECT_NE(logit_of(a, noise), logit_of(b, noise));
}

TEST(StudentForward, ShortInputReportsMinimumLength) {
  const QualityModel m = QualityModel::student(tiny_student(), 5);
  try {
    m.forward(Tensor({2, 161, 3}));
    FAIL() << "expected ShapeError";
  } catch (const sqac::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("800 samples"), std::string::npos) << e.what();
  }
  EXPECT_NO_THROW(m.forward(Tensor({2, 161, model::kMinFrames})));
  EXPECT_THROW(m.forward(Tensor({2, 160, 10})), sqac::ShapeError);
}

TEST(HeadForward, IdenticalFramesPoolToTheSameValue) {
  // Without positions every frame encodes identically, so the pooled vector
  // and the logit cannot depend on the sequence length.
  QualityModel m = QualityModel::head_only(small_head(false), 11);
  perturb_pool_query(m);
  const Tensor frame = random_tensor({1, 8}, 2);
  const double one = logit_of(m, frame);
  for (std::size_t t : {2u, 5u, 9u}) {
    Tensor seq({t, 8});
    for (std::size_t r = 0; r < t; ++r)
      std::copy(frame.data().begin(), frame.data().end(), seq.data().begin() + static_cast<long>(r * 8));
    EXPECT_NEAR(logit_of(m, seq), one, 1e-5) << t;
  }
}

TEST(HeadForward, PoolingOfIdenticalRowsReturnsTheRow) {
  const Tensor q = random_tensor({1, 6}, 3);
  const Tensor row = random_tensor({1, 6}, 4);
  Tensor x({7, 6});
  for (std::size_t r = 0; r < 7; ++r)
    std::copy(row.data().begin(), row.data().end(), x.data().begin() + static_cast<long>(r * 6));
  const Tensor pooled = sqac::ops::scaled_dot_product_attention(q, x, x, 1);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(pooled.data()[i], row.data()[i], 1e-6);
}

TEST(HeadForward, PermutationMattersOnlyWithPositions) {
  const Tensor seq = random_tensor({6, 8}, 8);
  Tensor perm({6, 8});
  const std::size_t order[6] = {3, 0, 5, 1, 4, 2};
  for (std::size_t r = 0; r < 6; ++r)
    std::copy_n(seq.data().begin() + static_cast<long>(order[r] * 8), 8, perm.data().begin() + static_cast<long>(r * 8));

  QualityModel with_pe = QualityModel::head_only(small_head(true), 21);
  QualityModel without = QualityModel::head_only(small_head(false), 21);
  perturb_pool_query(with_pe);
  perturb_pool_query(without);
  EXPECT_GT(std::abs(logit_of(with_pe, seq) - logit_of(with_pe, perm)), 1e-4);
  EXPECT_NEAR(logit_of(without, seq), logit_of(without, perm), 1e-5);
}

TEST(HeadForward, RejectsEmptyAndMismatchedInput) {
  const QualityModel m = QualityModel::head_only(small_head(true), 1);
  EXPECT_THROW(m.forward(Tensor(sqac::Shape{0, 8})), sqac::ShapeError);
  EXPECT_THROW(m.forward(Tensor({4, 7})), sqac::ShapeError);
}

TEST(Masks, ApplyZeroesPrunedEntries) {
  QualityModel m = QualityModel::student(tiny_student(), 2);
  auto& w = m.parameter("embed.conv1.weight");
  w.mask.assign(w.value.numel(), 1);
  w.mask[0] = w.mask[5] = 0;
  m.apply_masks();
  EXPECT_EQ(w.value.data()[0], 0.0f);
  EXPECT_EQ(w.value.data()[5], 0.0f);
  EXPECT_NE(w.value.data()[1], 0.0f);
}

// ---- bias transform ----

TEST(ToMos, ReferencePoints) {
  EXPECT_DOUBLE_EQ(model::to_mos(0.0, 1.0, 0.0), 3.0);
  EXPECT_NEAR(model::to_mos(std::log(3.0), 1.0, 0.0), 4.0, 1e-12);
  EXPECT_NEAR(model::to_mos(60.0, 1.0, 0.0), 5.0, 1e-12);
  EXPECT_NEAR(model::to_mos(-60.0, 1.0, 0.0), 1.0, 1e-12);
  EXPECT_LT(model::to_mos(10.0, 1.0, 0.0), 5.0);
}

TEST(ToMos, PositiveScalePreservesOrder) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 2.0);
  std::uniform_real_distribution<double> a(0.1, 4.0), b(-3.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    const double z1 = g(rng), z2 = g(rng), s = a(rng), t = b(rng);
    if (z1 == z2) continue;
    EXPECT_EQ(z1 < z2, model::to_mos(z1, s, t) < model::to_mos(z2, s, t));
  }
}

TEST(BiasTransformTest, RenderMatchesScalarFormula) {
  model::BiasTransform bias;
  auto& e = bias.ensure("lab");
  e.scale.data()[0] = 1.7f;
  e.shift.data()[0] = -0.4f;
  bias.set_universal(0.5f, 0.25f);
  const Tensor logit(sqac::Shape{1}, 0.8f);
  EXPECT_NEAR(bias.render(logit, "lab").item(), model::to_mos(0.8, 1.7, -0.4), 1e-6);
  EXPECT_NEAR(bias.render(logit, std::string("unseen")).item(), model::to_mos(0.8, 0.5, 0.25), 1e-6);
  EXPECT_NEAR(bias.render(logit, std::nullopt).item(), model::to_mos(0.8, 0.5, 0.25), 1e-6);
  EXPECT_THROW(bias.set_universal(0.0f, 0.0f), sqac::Error);
}

TEST(BiasTransformTest, ClampKeepsScalesPositive) {
  model::BiasTransform bias;
  bias.ensure("a").scale.data()[0] = -2.0f;
  bias.clamp_scales();
  EXPECT_EQ(bias.entries().at("a").scale.item(), model::BiasTransform::kMinScale);
}

TEST(InverseToLogit, WorkedExample) {
  const double z = model::inverse_to_logit(3.0, 2.0, 1.0, 1.0, 0.0);
  EXPECT_NEAR(z, -0.5, 1e-12);
  EXPECT_NEAR(model::to_mos(z, 1.0, 0.0), 2.510, 0.001);
}

TEST(InverseToLogit, IdentityTransformsKeepMos) {
  for (double mos : {1.2, 2.0, 3.3, 4.9})
    EXPECT_NEAR(model::to_mos(model::inverse_to_logit(mos, 1.0, 0.0, 1.0, 0.0), 1.0, 0.0), mos, 1e-9);
}

TEST(InverseToLogit, RoundTripThroughSameTransform) {
  // z_u is a universal-domain pre-activation; the raw logit behind it,
  // rendered with the dataset's own pair, must give back the label.
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> mos(1.01, 4.99), a(0.25, 4.0), b(-3.0, 3.0);
  for (int i = 0; i < 10000; ++i) {
    const double m = mos(rng), ad = a(rng), bd = b(rng), au = a(rng), bu = b(rng);
    const double z_u = model::inverse_to_logit(m, ad, bd, au, bu);
    const double logit = (z_u - bu) / au;
    ASSERT_NEAR(model::to_mos(logit, ad, bd), m, 1e-6);
  }
}

TEST(InverseToLogit, ClampsInterval) {
  const double top = model::inverse_to_logit(5.0, 1.0, 0.0, 1.0, 0.0);
  EXPECT_TRUE(std::isfinite(top));
  EXPECT_NEAR(model::to_mos(top, 1.0, 0.0), 5.0 - 1e-4, 1e-9);
  const double bottom = model::inverse_to_logit(1.0, 1.0, 0.0, 1.0, 0.0);
  EXPECT_NEAR(model::to_mos(bottom, 1.0, 0.0), 1.0 + 1e-4, 1e-9);
}

TEST(FitUniversalBias, CalibratedLogitsGiveIdentity) {
  std::vector<double> z, y;
  for (int i = 0; i <= 40; ++i) {
    z.push_back(-2.0 + 0.1 * i);
    y.push_back(model::to_mos(z.back(), 1.0, 0.0));
  }
  const auto [a, b] = model::fit_universal_bias(z, y);
  EXPECT_DOUBLE_EQ(a, 1.0);
  EXPECT_DOUBLE_EQ(b, 0.0);
}

TEST(FitUniversalBias, RecoversDoubledScale) {
  std::vector<double> z, y;
  for (int i = 0; i <= 40; ++i) {
    z.push_back(-2.0 + 0.1 * i);
    y.push_back(model::to_mos(2.0 * z.back(), 1.0, 0.0));
  }
  const auto [a, b] = model::fit_universal_bias(z, y);
  EXPECT_NEAR(a, 2.0, 1e-12);
  EXPECT_NEAR(b, 0.0, 1e-12);
}

TEST(FitUniversalBias, NeverWorseThanIdentity) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(1.0, 5.0);
  std::vector<double> z(200), y(200);
  for (auto& v : z) v = g(rng);
  for (auto& v : y) v = u(rng);
  auto mse = [&](double a, double b) {
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += std::pow(model::to_mos(z[i], a, b) - y[i], 2);
    return s / static_cast<double>(z.size());
  };
  const auto [a, b] = model::fit_universal_bias(z, y);
  EXPECT_LE(mse(a, b), mse(1.0, 0.0));
  EXPECT_THROW(model::fit_universal_bias({}, {}), sqac::Error);
}

// ---- checkpoints ----

QualityModel populated_model() {
  QualityModel m = QualityModel::student(tiny_student(), 9);
  auto& w = m.parameter("embed.proj.weight");
  w.mask.assign(w.value.numel(), 1);
  for (std::size_t i = 0; i < w.mask.size(); i += 3) w.mask[i] = 0;
  m.apply_masks();
  auto& e = m.bias().ensure("lab-a");
  e.scale.data()[0] = 1.25f;
  e.shift.data()[0] = -0.5f;
  m.bias().ensure("lab-b");
  m.bias().set_universal(0.875f, 0.125f);
  return m;
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  TempDir dir;
  const QualityModel m = populated_model();
  model::save_checkpoint(m, dir / "a.sqac");
  const QualityModel back = model::load_checkpoint(dir / "a.sqac");
  model::save_checkpoint(back, dir / "b.sqac");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  };
  EXPECT_EQ(slurp(dir / "a.sqac"), slurp(dir / "b.sqac"));
  EXPECT_FALSE(std::filesystem::exists(dir / "a.sqac.tmp"));

  EXPECT_EQ(back.architecture().student, m.architecture().student);
  EXPECT_EQ(back.parameter("embed.proj.weight").mask, m.parameter("embed.proj.weight").mask);
  EXPECT_EQ(back.bias().universal(), m.bias().universal());
  EXPECT_EQ(back.bias().entries().at("lab-a").scale.item(), 1.25f);
  const Tensor x = random_tensor({2, 161, 10}, 5);
  EXPECT_EQ(back.forward(x).item(), m.forward(x).item());
}

TEST(Checkpoint, HeadOnlyModelsRoundTrip) {
  const QualityModel m = QualityModel::head_only(small_head(true), 4);
  const auto bytes = model::serialize(m);
  EXPECT_EQ(model::serialize(model::deserialize(bytes)), bytes);
}

TEST(Checkpoint, DetectsCorruptionAndTruncation) {
  const auto bytes = model::serialize(populated_model());
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(model::deserialize(flipped), sqac::FormatError);
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 40);
  EXPECT_THROW(model::deserialize(cut), sqac::FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(model::deserialize(magic), sqac::FormatError);
}

TEST(Checkpoint, MissingFileIsAnIoError) {
  TempDir dir;
  EXPECT_THROW(model::load_checkpoint(dir / "absent.sqac"), sqac::IoError);
}

}  // namespace
