#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sqac/tensor.hpp"

namespace sqac {

struct AdamWOptions {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;
};

// One optimizer-visible parameter. A non-null mask pins entries with mask 0
// to exactly zero after every step.
struct ParamSlot {
  std::string name;
  Tensor param;
  const std::vector<std::uint8_t>* mask = nullptr;
  bool decay = true;
};

class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {}

  // Throws Error if a parameter has no gradient and NumericalError naming the
  // parameter if a gradient is not finite. Nothing is modified on error.
  void step(std::span<const ParamSlot> params);

  std::int64_t steps() const { return t_; }
  const AdamWOptions& options() const { return options_; }
  void set_lr(float lr) { options_.lr = lr; }

 private:
  struct Moments {
    std::vector<float> m;
    std::vector<float> v;
  };
  AdamWOptions options_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace sqac
