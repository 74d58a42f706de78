#include "sqac/adamw.hpp"

#include <cmath>

#include "sqac/error.hpp"
#include "sqac/simd/kernels.hpp"

namespace sqac {

void AdamW::step(std::span<const ParamSlot> params) {
  for (const ParamSlot& p : params) {
    if (!p.param.has_grad()) throw Error("adamw: parameter '" + p.name + "' has no gradient");
    for (float g : p.param.grad())
      if (!std::isfinite(g)) throw NumericalError("adamw: non-finite gradient for '" + p.name + "'");
    if (p.mask != nullptr && p.mask->size() != p.param.numel())
      throw ShapeError("adamw: mask size mismatch for '" + p.name + "'");
  }

  ++t_;
  simd::AdamWCoeffs c{options_.lr, options_.beta1, options_.beta2, options_.eps,
                      options_.weight_decay,
                      1.0f - static_cast<float>(std::pow(options_.beta1, static_cast<double>(t_))),
                      1.0f - static_cast<float>(std::pow(options_.beta2, static_cast<double>(t_)))};
  const auto& kt = simd::kernels();
  for (const ParamSlot& p : params) {
    Moments& mom = state_[p.name];
    const std::size_t n = p.param.numel();
    if (mom.m.size() != n) {
      mom.m.assign(n, 0.0f);
      mom.v.assign(n, 0.0f);
    }
    Tensor w = p.param;
    c.weight_decay = p.decay ? options_.weight_decay : 0.0f;
    kt.adamw(n, w.data().data(), w.grad().data(), mom.m.data(), mom.v.data(), c);
    if (p.mask != nullptr) {
      auto wd = w.data();
      for (std::size_t i = 0; i < n; ++i)
        if ((*p.mask)[i] == 0) {
          wd[i] = 0.0f;
          mom.m[i] = 0.0f;
          mom.v[i] = 0.0f;
        }
    }
  }
}

}  // namespace sqac
