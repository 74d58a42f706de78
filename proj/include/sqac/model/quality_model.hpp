#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sqac/adamw.hpp"
#include "sqac/model/bias.hpp"
#include "sqac/model/config.hpp"
#include "sqac/tensor.hpp"

namespace sqac::model {

struct Parameter {
  std::string name;
  Tensor value;
  std::vector<std::uint8_t> mask;  // empty = dense; otherwise 1 keeps, 0 prunes
  bool prunable = false;           // embedder weight matrices and conv kernels
  bool decay = true;
};

// Raw-logit regressor. Students map (2, 161, T) features through a conv
// stack and frame projection (the "embed." parameters, prunable) into the
// transformer head ("head." parameters, never pruned). Head-only models take
// a (T, dim) embedding sequence directly.
class QualityModel {
 public:
  QualityModel() = default;

  static QualityModel student(const StudentConfig& config, std::uint64_t seed);
  static QualityModel head_only(const HeadConfig& config, std::uint64_t seed);
  // Fresh parameters for a parsed descriptor (values overwritten on load).
  static QualityModel from_architecture(const Architecture& arch, std::uint64_t seed = 0);

  // Scalar logit, shape (1). Throws ShapeError on malformed input, including
  // too few frames (message gives the minimum clip length).
  Tensor forward(const Tensor& input) const;

  // forward followed by the bias transform (dataset id or universal).
  Tensor predict_mos(const Tensor& input, const std::optional<std::string>& dataset_id);

  const Architecture& architecture() const { return arch_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& parameter(const std::string& name);
  const Parameter& parameter(const std::string& name) const;

  BiasTransform& bias() { return bias_; }
  const BiasTransform& bias() const { return bias_; }

  // All trainable tensors (model parameters plus per-dataset transforms) as
  // optimizer slots; transforms are excluded from weight decay.
  std::vector<ParamSlot> optimizer_slots();

  // Zeroes the gradient of every trainable tensor.
  void zero_grad();

  // Re-applies all masks to parameter values.
  void apply_masks();

  // Deep copy sharing no storage.
  QualityModel clone() const;

 private:
  Tensor& add_param(const std::string& name, Shape shape, bool prunable, bool decay);
  void init_head(const HeadConfig& h, std::uint64_t seed_base);
  Tensor embed(const Tensor& features) const;
  Tensor run_head(const Tensor& frames) const;
  const Tensor& p(const std::string& name) const;

  Architecture arch_;
  std::vector<Parameter> params_;
  BiasTransform bias_;
};

// Dense mode: sum of all parameter extents. Sparse mode: each masked tensor
// costs min(dense, 1.5 * surviving) (value plus 16-bit index per survivor);
// unmasked tensors cost their dense size.
double count_parameters(const QualityModel& model, bool sparse_accounting);
double sparse_cost(std::size_t dense, std::size_t surviving);

// Sinusoidal positional table, (T, dim).
Tensor sinusoidal_positions(std::size_t frames, std::size_t dim);

}  // namespace sqac::model
