#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "sqac/tensor.hpp"

namespace sqac::model {

// MOS = 1 + 4 sigmoid(a * logit + b).
double to_mos(double logit, double scale, double shift);

// Logit-domain rating transform. Per-dataset (a_d, b_d) are learnable scalar
// tensors; the universal pair (a_u, b_u) is fitted after training and serves
// unknown datasets.
class BiasTransform {
 public:
  static constexpr float kMinScale = 1e-3f;

  struct Entry {
    Tensor scale;  // shape (1)
    Tensor shift;  // shape (1)
  };

  // Returns the entry for `dataset_id`, creating an identity one if absent.
  Entry& ensure(const std::string& dataset_id);
  bool has(const std::string& dataset_id) const { return per_dataset_.count(dataset_id) != 0; }

  // (a, b) for a dataset, or the universal pair when the id is unknown or empty.
  std::pair<double, double> params(const std::optional<std::string>& dataset_id) const;

  void set_universal(float scale, float shift);
  std::pair<float, float> universal() const { return {universal_scale_, universal_shift_}; }

  // Differentiable rendering of a (1)-shaped logit. Unknown or empty ids use
  // the universal pair as constants.
  Tensor render(const Tensor& logit, const std::optional<std::string>& dataset_id);

  // Keeps every per-dataset scale at or above kMinScale.
  void clamp_scales();

  const std::map<std::string, Entry>& entries() const { return per_dataset_; }
  BiasTransform clone() const;

 private:
  std::map<std::string, Entry> per_dataset_;
  float universal_scale_ = 1.0f;
  float universal_shift_ = 0.0f;
};

// Expresses a dataset's MOS label in the universal logit domain:
// z_d = logit((mos - 1) / 4), z_u = a_u (z_d - b_d) / a_d + b_u.
// MOS at or beyond the open interval edges is clamped to [1 + 1e-4, 5 - 1e-4]
// with a warning.
double inverse_to_logit(double mos, double dataset_scale, double dataset_shift, double universal_scale,
                        double universal_shift);
double inverse_to_logit(double mos, const BiasTransform& bias, const std::string& dataset_id);

// Grid search over a in [0.25, 4] (33 log-spaced points) and b in [-3, 3]
// (49 points) minimizing the mean squared error between 1 + 4 sigmoid(a z + b)
// and the labels; every clip weighs the same, so datasets count by size.
// Ties resolve toward (1, 0). Throws Error on empty input.
std::pair<double, double> fit_universal_bias(std::span<const double> logits, std::span<const double> labels);

}  // namespace sqac::model
