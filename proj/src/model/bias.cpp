#include "sqac/model/bias.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include "sqac/error.hpp"
#include "sqac/log.hpp"
#include "sqac/ops.hpp"

namespace sqac::model {
namespace {

constexpr double kMosEpsilon = 1e-4;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

double to_mos(double logit, double scale, double shift) { return 1.0 + 4.0 * sigmoid(scale * logit + shift); }

BiasTransform::Entry& BiasTransform::ensure(const std::string& dataset_id) {
  if (dataset_id.empty()) throw Error("bias transform: empty dataset id");
  auto it = per_dataset_.find(dataset_id);
  if (it == per_dataset_.end()) {
    Entry e{Tensor({1}, 1.0f), Tensor({1}, 0.0f)};
    e.scale.set_requires_grad();
    e.shift.set_requires_grad();
    it = per_dataset_.emplace(dataset_id, std::move(e)).first;
  }
  return it->second;
}

std::pair<double, double> BiasTransform::params(const std::optional<std::string>& dataset_id) const {
  if (dataset_id && !dataset_id->empty()) {
    auto it = per_dataset_.find(*dataset_id);
    if (it != per_dataset_.end()) return {it->second.scale.item(), it->second.shift.item()};
  }
  return {universal_scale_, universal_shift_};
}

void BiasTransform::set_universal(float scale, float shift) {
  if (!(scale > 0.0f)) throw Error("bias transform: universal scale must be positive");
  universal_scale_ = scale;
  universal_shift_ = shift;
}

Tensor BiasTransform::render(const Tensor& logit, const std::optional<std::string>& dataset_id) {
  Tensor z;
  if (dataset_id && !dataset_id->empty() && has(*dataset_id)) {
    const Entry& e = per_dataset_.at(*dataset_id);
    z = ops::add(ops::mul(logit, e.scale), e.shift);
  } else {
    z = ops::affine(logit, universal_scale_, universal_shift_);
  }
  return ops::affine(ops::sigmoid(z), 4.0f, 1.0f);
}

void BiasTransform::clamp_scales() {
  for (auto& [id, e] : per_dataset_) e.scale.data()[0] = std::max(e.scale.data()[0], kMinScale);
}

BiasTransform BiasTransform::clone() const {
  BiasTransform out;
  out.universal_scale_ = universal_scale_;
  out.universal_shift_ = universal_shift_;
  for (const auto& [id, e] : per_dataset_) {
    Entry c{e.scale.clone(), e.shift.clone()};
    c.scale.set_requires_grad();
    c.shift.set_requires_grad();
    out.per_dataset_.emplace(id, std::move(c));
  }
  return out;
}

double inverse_to_logit(double mos, double a_d, double b_d, double a_u, double b_u) {
  if (!(a_d > 0.0) || !(a_u > 0.0)) throw Error("inverse_to_logit: scales must be positive");
  if (mos <= 1.0 + kMosEpsilon || mos >= 5.0 - kMosEpsilon) {
    const double clamped = std::clamp(mos, 1.0 + kMosEpsilon, 5.0 - kMosEpsilon);
    // Corpora often hold many exact 5.0 labels; report the first few only.
    static std::atomic<int> warnings{0};
    if (clamped != mos) {
      const int n = warnings++;
      if (n < 3)
        log::warn("MOS " + std::to_string(mos) + " clamped to " + std::to_string(clamped) +
                  (n == 2 ? " (further clamp warnings suppressed)" : ""));
    }
    mos = clamped;
  }
  const double p = (mos - 1.0) / 4.0;
  const double z_d = std::log(p / (1.0 - p));
  return a_u * (z_d - b_d) / a_d + b_u;
}

double inverse_to_logit(double mos, const BiasTransform& bias, const std::string& dataset_id) {
  const auto [a_d, b_d] = bias.params(dataset_id);
  const auto [a_u, b_u] = bias.universal();
  return inverse_to_logit(mos, a_d, b_d, a_u, b_u);
}

std::pair<double, double> fit_universal_bias(std::span<const double> logits, std::span<const double> labels) {
  if (logits.empty()) throw Error("fit_universal_bias: empty validation set");
  if (logits.size() != labels.size()) throw Error("fit_universal_bias: logits and labels differ in length");
  double best_mse = std::numeric_limits<double>::infinity();
  double best_a = 1.0, best_b = 0.0;
  int best_rank = std::numeric_limits<int>::max();
  for (int i = 0; i <= 32; ++i) {
    const double a = std::exp2((i - 16) / 8.0);  // i = 16 is exactly 1
    for (int j = 0; j <= 48; ++j) {
      const double b = -3.0 + j / 8.0;  // j = 24 is exactly 0
      double se = 0.0;
      for (std::size_t k = 0; k < logits.size(); ++k) {
        const double d = to_mos(logits[k], a, b) - labels[k];
        se += d * d;
      }
      const double mse = se / static_cast<double>(logits.size());
      // Grid distance from (1, 0) decides ties.
      const int rank = std::abs(i - 16) + std::abs(j - 24);
      const double tol = 1e-12 * std::max(1.0, best_mse);
      if (mse < best_mse - tol || (std::abs(mse - best_mse) <= tol && rank < best_rank)) {
        best_mse = std::min(mse, best_mse);
        best_a = a;
        best_b = b;
        best_rank = rank;
      }
    }
  }
  return {best_a, best_b};
}

}  // namespace sqac::model
