#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sqac/adamw.hpp"
#include "sqac/error.hpp"
#include "sqac/ops.hpp"
#include "support/gradcheck.hpp"

namespace {

using sqac::AdamW;
using sqac::AdamWOptions;
using sqac::ParamSlot;
using sqac::Tape;
using sqac::TapeScope;
using sqac::Tensor;
namespace ops = sqac::ops;

TEST(Ops, LeakyReluUsesSlopeForNegatives) {
  Tensor y = ops::leaky_relu(Tensor({2}, {-1.0f, 2.0f}), 0.1f);
  EXPECT_FLOAT_EQ(y.data()[0], -0.1f);
  EXPECT_FLOAT_EQ(y.data()[1], 2.0f);
}

TEST(Ops, SigmoidOfZeroIsHalf) { EXPECT_FLOAT_EQ(ops::sigmoid(Tensor::scalar(0.0f)).item(), 0.5f); }

TEST(Ops, StridedConvComputesWindowSums) {
  std::vector<float> x(25);
  for (std::size_t i = 0; i < 25; ++i) x[i] = static_cast<float>(i);
  Tensor y = ops::conv2d(Tensor({1, 5, 5}, x), Tensor({1, 1, 3, 3}, 1.0f), Tensor(),
                         ops::Conv2dOptions{2, 2, 0, 0});
  ASSERT_EQ(y.shape(), (sqac::Shape{1, 2, 2}));
  // Window sum at (r, c) = 9 * center value for a linear ramp.
  EXPECT_FLOAT_EQ(y.data()[0], 9.0f * 6.0f);
  EXPECT_FLOAT_EQ(y.data()[1], 9.0f * 8.0f);
  EXPECT_FLOAT_EQ(y.data()[2], 9.0f * 16.0f);
  EXPECT_FLOAT_EQ(y.data()[3], 9.0f * 18.0f);
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  try {
    ops::matmul(Tensor({2, 3}), Tensor({2, 3}));
    FAIL() << "expected ShapeError";
  } catch (const sqac::ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("(2,3)"), std::string::npos);
  }
  EXPECT_THROW(ops::add(Tensor({2, 3}), Tensor({2})), sqac::ShapeError);
  EXPECT_THROW(ops::scaled_dot_product_attention(Tensor({2, 6}), Tensor({3, 6}), Tensor({3, 6}), 4),
               sqac::ShapeError);
}

TEST(Ops, NonFiniteForwardIsAnError) {
  EXPECT_THROW(ops::affine(Tensor({1}, {3e38f}), 10.0f, 0.0f), sqac::NumericalError);
}

TEST(Backward, SquareGradient) {
  Tensor w = Tensor::scalar(3.0f).set_requires_grad();
  Tape tape;
  TapeScope scope(tape);
  tape.backward(ops::mul(w, w));
  EXPECT_FLOAT_EQ(w.grad()[0], 6.0f);
}

TEST(Backward, SigmoidGradientAtZero) {
  Tensor w = Tensor::scalar(0.0f).set_requires_grad();
  Tape tape;
  TapeScope scope(tape);
  tape.backward(ops::sigmoid(w));
  EXPECT_FLOAT_EQ(w.grad()[0], 0.25f);
}

TEST(Backward, RejectsNonScalarAndDetachedLoss) {
  Tensor w = Tensor({3}, 1.0f).set_requires_grad();
  Tape tape;
  TapeScope scope(tape);
  Tensor y = ops::sigmoid(w);
  EXPECT_THROW(tape.backward(y), sqac::ShapeError);
  EXPECT_THROW(tape.backward(Tensor::scalar(1.0f)), sqac::Error);
}

TEST(Backward, RepeatedPassesDoNotAccumulateAcrossPasses) {
  Tensor w = Tensor::scalar(2.0f).set_requires_grad();
  for (int pass = 0; pass < 3; ++pass) {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(ops::mul(w, w));
    EXPECT_FLOAT_EQ(w.grad()[0], 4.0f);
  }
}

TEST(Backward, AnalyticGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(20240611);
  for (const auto& c : sqac::testing::op_cases()) {
    for (int i = 0; i < 20; ++i) {
      const auto res = sqac::testing::check_instance(c.make(rng), rng);
      EXPECT_LE(res.max_forward_error, 1e-5) << c.name << " instance " << i;
      EXPECT_LE(res.max_rel_error, 1e-4) << c.name << " instance " << i;
    }
  }
}

TEST(Backward, LinearInLossCombination) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n;
  std::vector<float> xv(12), wv(12);
  for (auto& v : xv) v = n(rng);
  for (auto& v : wv) v = n(rng);
  Tensor x({3, 4}, xv);
  Tensor w = Tensor({4, 3}, wv).set_requires_grad();
  auto l1 = [&] { return ops::mean(ops::sigmoid(ops::matmul(x, w))); };
  auto l2 = [&] { return ops::mean(ops::mul(ops::matmul(x, w), ops::matmul(x, w))); };
  auto grad_of = [&](auto&& loss_fn) {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(loss_fn());
    return std::vector<float>(w.grad().begin(), w.grad().end());
  };
  const float a = 0.7f, b = -1.3f;
  const auto g1 = grad_of(l1), g2 = grad_of(l2);
  const auto g = grad_of([&] { return ops::add(ops::affine(l1(), a, 0.0f), ops::affine(l2(), b, 0.0f)); });
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], a * g1[i] + b * g2[i], 1e-6);
}

TEST(Backward, DeterministicAcrossRuns) {
  auto run = [] {
    std::mt19937_64 rng(99);
    const auto inst = sqac::testing::op_cases()[1].make(rng);  // conv2d
    std::vector<Tensor> in;
    std::normal_distribution<float> n;
    for (const auto& s : inst.shapes) {
      std::vector<float> v(sqac::shape_numel(s));
      for (auto& x : v) x = n(rng);
      in.push_back(Tensor(s, v).set_requires_grad());
    }
    Tape tape;
    TapeScope scope(tape);
    tape.backward(ops::mean(ops::sigmoid(inst.run(in))));
    return std::vector<float>(in[1].grad().begin(), in[1].grad().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(AdamW, SingleStepFromUnitGradient) {
  Tensor w = Tensor::scalar(1.0f);
  w.zero_grad();
  w.grad()[0] = 1.0f;
  AdamW opt(AdamWOptions{0.1f, 0.9f, 0.999f, 1e-8f, 0.0f});
  std::vector<ParamSlot> slots{{"w", w}};
  opt.step(slots);
  EXPECT_NEAR(w.item(), 0.9f, 1e-4);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(AdamW, ZeroGradientAndZeroDecayLeavesParameter) {
  Tensor w = Tensor::scalar(1.0f);
  w.zero_grad();
  AdamW opt(AdamWOptions{0.1f, 0.9f, 0.999f, 1e-8f, 0.0f});
  std::vector<ParamSlot> slots{{"w", w}};
  opt.step(slots);
  EXPECT_EQ(w.item(), 1.0f);
}

TEST(AdamW, DecoupledDecayOnly) {
  Tensor w = Tensor::scalar(1.0f);
  w.zero_grad();
  AdamW opt(AdamWOptions{0.1f, 0.9f, 0.999f, 1e-8f, 0.01f});
  std::vector<ParamSlot> slots{{"w", w}};
  opt.step(slots);
  EXPECT_NEAR(w.item(), 0.999f, 1e-7);
}

TEST(AdamW, MaskedEntriesStayZero) {
  Tensor w({4}, {1.0f, 0.0f, 3.0f, 0.0f});
  w.zero_grad();
  for (auto& g : w.grad()) g = 0.5f;
  std::vector<std::uint8_t> mask{1, 0, 1, 0};
  AdamW opt;
  std::vector<ParamSlot> slots{{"w", w, &mask}};
  for (int i = 0; i < 5; ++i) opt.step(slots);
  EXPECT_EQ(w.data()[1], 0.0f);
  EXPECT_EQ(w.data()[3], 0.0f);
  EXPECT_NE(w.data()[0], 1.0f);
}

TEST(AdamW, ErrorsOnMissingOrNonFiniteGradient) {
  Tensor w = Tensor::scalar(1.0f);
  AdamW opt;
  std::vector<ParamSlot> slots{{"weights.a", w}};
  EXPECT_THROW(opt.step(slots), sqac::Error);
  w.zero_grad();
  w.grad()[0] = std::nanf("");
  try {
    opt.step(slots);
    FAIL();
  } catch (const sqac::NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("weights.a"), std::string::npos);
  }
  EXPECT_EQ(opt.steps(), 0);
}

}  // namespace
