#include "sqac/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <utility>

#include "sqac/error.hpp"
#include "sqac/simd/kernels.hpp"

namespace sqac::ops {
namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

// Wraps freshly computed values, validates them, and records the backward
// rule when needed. `backward` receives the output impl.
template <typename Fn>
Tensor finish(std::string_view op, Shape shape, std::vector<float> values,
              std::initializer_list<const Tensor*> inputs, Fn&& backward) {
  check_finite(values, op);
  Tensor out(std::move(shape), std::move(values));
  Tape* tape = active_tape();
  if (tape != nullptr && any_requires_grad(inputs)) {
    out.set_requires_grad(true);
    std::vector<ImplPtr> ins;
    for (const Tensor* t : inputs)
      if (t->defined()) ins.push_back(t->handle());
    ImplPtr o = out.handle();
    tape->record(op, std::move(ins), o,
                 [fn = std::forward<Fn>(backward), o]() { fn(*o); });
  }
  return out;
}

// Gradient buffer of an input, or nullptr when it does not take gradients.
float* gbuf(const ImplPtr& t) {
  return (t && t->requires_grad && !t->grad.empty()) ? t->grad.data() : nullptr;
}

[[noreturn]] void shape_fail(std::string_view op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

void transpose_into(const float* src, std::size_t rows, std::size_t cols, std::size_t ld,
                    float* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * ld + c];
}

struct ConvGeom {
  std::size_t c, h, w, o, kh, kw, oh, ow;
  Conv2dOptions opt;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

// Output columns [lo, hi) whose input column ox*stride + kj - pad is in range.
std::pair<std::size_t, std::size_t> valid_columns(const ConvGeom& g, std::size_t kj) {
  const std::size_t s = g.opt.stride_w, pad = g.opt.pad_w;
  const std::size_t lo = kj >= pad ? 0 : (pad - kj + s - 1) / s;
  // Largest ox with ox*s + kj - pad <= w - 1.
  const std::size_t limit = g.w - 1 + pad;
  const std::size_t hi = kj > limit ? 0 : std::min(g.ow, (limit - kj) / s + 1);
  return {std::min(lo, hi), hi};
}

void im2col(const float* x, const ConvGeom& g, float* cols) {
  const std::size_t p = g.positions(), s = g.opt.stride_w;
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        float* row = cols + ((ci * g.kh + ki) * g.kw + kj) * p;
        const auto [lo, hi] = valid_columns(g, kj);
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          float* dst = row + oy * g.ow;
          const long iy = static_cast<long>(oy * g.opt.stride_h + ki) - static_cast<long>(g.opt.pad_h);
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.ow, 0.0f);
            continue;
          }
          std::fill(dst, dst + lo, 0.0f);
          std::fill(dst + hi, dst + g.ow, 0.0f);
          const float* src = x + (ci * g.h + static_cast<std::size_t>(iy)) * g.w + kj - g.opt.pad_w;
          if (s == 1) {
            std::memcpy(dst + lo, src + lo, (hi - lo) * sizeof(float));
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * s];
          }
        }
      }
}

void col2im(const float* cols, const ConvGeom& g, float* dx) {
  const std::size_t p = g.positions(), s = g.opt.stride_w;
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const float* row = cols + ((ci * g.kh + ki) * g.kw + kj) * p;
        const auto [lo, hi] = valid_columns(g, kj);
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.opt.stride_h + ki) - static_cast<long>(g.opt.pad_h);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          float* dst = dx + (ci * g.h + static_cast<std::size_t>(iy)) * g.w + kj - g.opt.pad_w;
          const float* src = row + oy * g.ow;
          if (s == 1) {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * s] += src[ox];
          }
        }
      }
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t pad) {
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (in + 2 * pad < kernel) return 0;
  return (in + 2 * pad - kernel) / stride + 1;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    shape_fail("matmul", "cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<float> out(m * n, 0.0f);
  simd::kernels().gemm_nn(m, n, k, a.data().data(), k, b.data().data(), n, out.data(), n);
  ImplPtr ai = a.handle(), bi = b.handle();
  return finish("matmul", {m, n}, std::move(out), {&a, &b}, [ai, bi, m, n, k](TensorImpl& o) {
    const auto& kt = simd::kernels();
    if (float* ga = gbuf(ai)) kt.gemm_nt(m, k, n, o.grad.data(), n, bi->data.data(), n, ga, k);
    if (float* gb = gbuf(bi)) {
      std::vector<float> at(k * m);
      transpose_into(ai->data.data(), m, k, k, at.data());
      kt.gemm_nn(k, n, m, at.data(), m, o.grad.data(), n, gb, n);
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dOptions& opt) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(1) != x.dim(0))
    shape_fail("conv2d", "input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(weight.shape()));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0)))
    shape_fail("conv2d", "bias " + shape_str(bias.shape()) + " does not match weight " +
                             shape_str(weight.shape()));
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), weight.dim(0), weight.dim(2), weight.dim(3), 0, 0, opt};
  g.oh = conv_out_extent(g.h, g.kh, opt.stride_h, opt.pad_h);
  g.ow = conv_out_extent(g.w, g.kw, opt.stride_w, opt.pad_w);
  if (g.oh == 0 || g.ow == 0)
    shape_fail("conv2d", "input " + shape_str(x.shape()) + " is smaller than kernel " +
                             shape_str(weight.shape()));
  const std::size_t p = g.positions(), kk = g.patch();
  // im2col overwrites every entry, so the buffer is left uninitialized.
  std::unique_ptr<float[]> cols(new float[kk * p]);
  im2col(x.data().data(), g, cols.get());
  std::vector<float> out(g.o * p, 0.0f);
  if (bias.defined())
    for (std::size_t oc = 0; oc < g.o; ++oc)
      std::fill(out.begin() + oc * p, out.begin() + (oc + 1) * p, bias.data()[oc]);
  simd::kernels().gemm_nn(g.o, p, kk, weight.data().data(), kk, cols.get(), p, out.data(), p);
  cols.reset();

  ImplPtr xi = x.handle(), wi = weight.handle(), bi = bias.handle();
  return finish("conv2d", {g.o, g.oh, g.ow}, std::move(out), {&x, &weight, &bias},
                [xi, wi, bi, g](TensorImpl& o) {
                  const auto& kt = simd::kernels();
                  const std::size_t p = g.positions(), kk = g.patch();
                  const float* dy = o.grad.data();
                  if (float* gb = gbuf(bi))
                    for (std::size_t oc = 0; oc < g.o; ++oc) {
                      // Independent partial sums break the add latency chain.
                      double s[4] = {0.0, 0.0, 0.0, 0.0};
                      const float* row = dy + oc * p;
                      std::size_t i = 0;
                      for (; i + 4 <= p; i += 4)
                        for (std::size_t l = 0; l < 4; ++l) s[l] += row[i + l];
                      for (; i < p; ++i) s[0] += row[i];
                      gb[oc] += static_cast<float>((s[0] + s[1]) + (s[2] + s[3]));
                    }
                  float* gw = gbuf(wi);
                  float* gx = gbuf(xi);
                  if (gw == nullptr && gx == nullptr) return;
                  std::unique_ptr<float[]> cols(new float[kk * p]);
                  if (gw != nullptr) {
                    im2col(xi->data.data(), g, cols.get());
                    kt.gemm_nt(g.o, kk, p, dy, p, cols.get(), p, gw, kk);
                  }
                  if (gx != nullptr) {
                    std::vector<float> wt(kk * g.o);
                    transpose_into(wi->data.data(), g.o, kk, kk, wt.data());
                    std::fill(cols.get(), cols.get() + kk * p, 0.0f);
                    kt.gemm_nn(kk, p, g.o, wt.data(), g.o, dy, p, cols.get(), p);
                    col2im(cols.get(), g, gx);
                  }
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool bias = !same && b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.dim(0);
  if (!same && !bias)
    shape_fail("add", "cannot add " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  std::vector<float> out(a.data().begin(), a.data().end());
  const std::size_t d = b.numel();
  const auto bv = b.data();
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % d];
  }
  ImplPtr ai = a.handle(), bi = b.handle();
  return finish("add", a.shape(), std::move(out), {&a, &b}, [ai, bi, same, d](TensorImpl& o) {
    const std::size_t n = o.grad.size();
    if (float* ga = gbuf(ai))
      for (std::size_t i = 0; i < n; ++i) ga[i] += o.grad[i];
    if (float* gb = gbuf(bi)) {
      if (same) {
        for (std::size_t i = 0; i < n; ++i) gb[i] += o.grad[i];
      } else {
        for (std::size_t i = 0; i < n; ++i) gb[i % d] += o.grad[i];
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    shape_fail("mul", "cannot multiply " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  std::vector<float> out(a.numel());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  ImplPtr ai = a.handle(), bi = b.handle();
  return finish("mul", a.shape(), std::move(out), {&a, &b}, [ai, bi](TensorImpl& o) {
    const std::size_t n = o.grad.size();
    if (float* ga = gbuf(ai))
      for (std::size_t i = 0; i < n; ++i) ga[i] += o.grad[i] * bi->data[i];
    if (float* gb = gbuf(bi))
      for (std::size_t i = 0; i < n; ++i) gb[i] += o.grad[i] * ai->data[i];
  });
}

Tensor affine(const Tensor& x, float scale, float shift) {
  std::vector<float> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * xv[i] + shift;
  ImplPtr xi = x.handle();
  return finish("affine", x.shape(), std::move(out), {&x}, [xi, scale](TensorImpl& o) {
    if (float* gx = gbuf(xi))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += scale * o.grad[i];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (x.rank() < 1 || gamma.rank() != 1 || beta.rank() != 1 ||
      gamma.dim(0) != x.shape().back() || beta.dim(0) != x.shape().back())
    shape_fail("layer_norm", "input " + shape_str(x.shape()) + " with gamma " +
                                 shape_str(gamma.shape()) + " and beta " + shape_str(beta.shape()));
  const std::size_t d = x.shape().back(), rows = x.numel() / d;
  std::vector<float> out(x.numel()), xhat(x.numel()), inv_std(rows);
  const auto xv = x.data(), gv = gamma.data(), bv = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const float h = static_cast<float>(row[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  ImplPtr xi = x.handle(), gi = gamma.handle(), bi = beta.handle();
  return finish("layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
                [xi, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std), d,
                 rows](TensorImpl& o) {
                  float* gx = gbuf(xi);
                  float* gg = gbuf(gi);
                  float* gb = gbuf(bi);
                  std::vector<float> dh(d);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const float* dy = o.grad.data() + r * d;
                    const float* h = xhat.data() + r * d;
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                      if (gg) gg[j] += dy[j] * h[j];
                      if (gb) gb[j] += dy[j];
                      dh[j] = dy[j] * gi->data[j];
                      mean_dh += dh[j];
                      mean_dh_h += dh[j] * h[j];
                    }
                    if (!gx) continue;
                    mean_dh /= static_cast<double>(d);
                    mean_dh_h /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j)
                      gx[r * d + j] += inv_std[r] * static_cast<float>(dh[j] - mean_dh - h[j] * mean_dh_h);
                  }
                });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() < 1) shape_fail("softmax", "scalar input");
  const std::size_t d = x.shape().back(), rows = x.numel() / d;
  std::vector<float> out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = xv.data() + r * d;
    const float mx = *std::max_element(row, row + d);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      out[r * d + j] = std::exp(row[j] - mx);
      s += out[r * d + j];
    }
    const float inv = static_cast<float>(1.0 / s);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] *= inv;
  }
  ImplPtr xi = x.handle();
  return finish("softmax", x.shape(), std::move(out), {&x}, [xi, d, rows](TensorImpl& o) {
    float* gx = gbuf(xi);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const float* y = o.data.data() + r * d;
      const float* dy = o.grad.data() + r * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += y[j] * static_cast<float>(dy[j] - dot);
    }
  });
}

Tensor leaky_relu(const Tensor& x, float slope) {
  std::vector<float> out(x.numel());
  const auto xv = x.data();
  // Select-free forms so the loops vectorize; signs of real activations are
  // random enough that a branch mispredicts about half the time.
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(xv[i], 0.0f) + slope * std::min(xv[i], 0.0f);
  ImplPtr xi = x.handle();
  return finish("leaky_relu", x.shape(), std::move(out), {&x}, [xi, slope](TensorImpl& o) {
    if (float* gx = gbuf(xi)) {
      const float* xd = xi->data.data();
      const float* go = o.grad.data();
      const std::size_t n = o.grad.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += go[i] * (xd[i] >= 0.0f ? 1.0f : slope);
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<float> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float v = xv[i];
    // Split by sign so exp never overflows.
    if (v >= 0.0f) {
      out[i] = 1.0f / (1.0f + std::exp(-v));
    } else {
      const float e = std::exp(v);
      out[i] = e / (1.0f + e);
    }
  }
  ImplPtr xi = x.handle();
  return finish("sigmoid", x.shape(), std::move(out), {&x}, [xi](TensorImpl& o) {
    if (float* gx = gbuf(xi))
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        gx[i] += o.grad[i] * o.data[i] * (1.0f - o.data[i]);
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) shape_fail("mean", "empty input");
  double s = 0.0;
  for (float v : x.data()) s += v;
  const std::size_t n = x.numel();
  ImplPtr xi = x.handle();
  return finish("mean", {}, {static_cast<float>(s / static_cast<double>(n))}, {&x},
                [xi, n](TensorImpl& o) {
                  if (float* gx = gbuf(xi)) {
                    const float g = o.grad[0] / static_cast<float>(n);
                    for (std::size_t i = 0; i < n; ++i) gx[i] += g;
                  }
                });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) shape_fail("transpose", "expected a matrix, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<float> out(x.numel());
  transpose_into(x.data().data(), r, c, c, out.data());
  ImplPtr xi = x.handle();
  return finish("transpose", {c, r}, std::move(out), {&x}, [xi, r, c](TensorImpl& o) {
    if (float* gx = gbuf(xi))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += o.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    shape_fail("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<float> out(x.data().begin(), x.data().end());
  ImplPtr xi = x.handle();
  return finish("reshape", std::move(shape), std::move(out), {&x}, [xi](TensorImpl& o) {
    if (float* gx = gbuf(xi))
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
  });
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    std::size_t heads) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || k.shape() != v.shape() ||
      q.dim(1) != k.dim(1))
    shape_fail("scaled_dot_product_attention",
               "q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                   shape_str(v.shape()));
  const std::size_t tq = q.dim(0), tk = k.dim(0), d = q.dim(1);
  if (heads == 0 || d % heads != 0)
    shape_fail("scaled_dot_product_attention",
               "width " + std::to_string(d) + " not divisible into " + std::to_string(heads) + " heads");
  if (tk == 0) shape_fail("scaled_dot_product_attention", "empty key sequence");
  const std::size_t dh = d / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const auto& kt = simd::kernels();

  std::vector<float> probs(heads * tq * tk, 0.0f);
  std::vector<float> out(tq * d, 0.0f);
  for (std::size_t h = 0; h < heads; ++h) {
    float* p = probs.data() + h * tq * tk;
    kt.gemm_nt(tq, tk, dh, q.data().data() + h * dh, d, k.data().data() + h * dh, d, p, tk);
    for (std::size_t i = 0; i < tq; ++i) {
      float* row = p + i * tk;
      float mx = -INFINITY;
      for (std::size_t j = 0; j < tk; ++j) mx = std::max(mx, row[j] * scale);
      double s = 0.0;
      for (std::size_t j = 0; j < tk; ++j) {
        row[j] = std::exp(row[j] * scale - mx);
        s += row[j];
      }
      const float inv = static_cast<float>(1.0 / s);
      for (std::size_t j = 0; j < tk; ++j) row[j] *= inv;
    }
    kt.gemm_nn(tq, dh, tk, p, tk, v.data().data() + h * dh, d, out.data() + h * dh, d);
  }

  ImplPtr qi = q.handle(), ki = k.handle(), vi = v.handle();
  return finish(
      "scaled_dot_product_attention", {tq, d}, std::move(out), {&q, &k, &v},
      [qi, ki, vi, probs = std::move(probs), tq, tk, d, dh, heads, scale](TensorImpl& o) {
        const auto& kt = simd::kernels();
        float* gq = gbuf(qi);
        float* gk = gbuf(ki);
        float* gv = gbuf(vi);
        std::vector<float> dp(tq * tk), tmp(tq * tk);
        for (std::size_t h = 0; h < heads; ++h) {
          const float* p = probs.data() + h * tq * tk;
          const float* dout = o.grad.data() + h * dh;
          if (gv) {
            transpose_into(p, tq, tk, tk, tmp.data());
            kt.gemm_nn(tk, dh, tq, tmp.data(), tq, dout, d, gv + h * dh, d);
          }
          if (!gq && !gk) continue;
          std::fill(dp.begin(), dp.end(), 0.0f);
          kt.gemm_nt(tq, tk, dh, dout, d, vi->data.data() + h * dh, d, dp.data(), tk);
          // dS = P * (dP - rowsum(dP * P)), folded with the score scale.
          for (std::size_t i = 0; i < tq; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < tk; ++j) dot += dp[i * tk + j] * p[i * tk + j];
            for (std::size_t j = 0; j < tk; ++j)
              dp[i * tk + j] = scale * p[i * tk + j] * static_cast<float>(dp[i * tk + j] - dot);
          }
          if (gq) kt.gemm_nn(tq, dh, tk, dp.data(), tk, ki->data.data() + h * dh, d, gq + h * dh, d);
          if (gk) {
            transpose_into(dp.data(), tq, tk, tk, tmp.data());
            kt.gemm_nn(tk, dh, tq, tmp.data(), tq, qi->data.data() + h * dh, d, gk + h * dh, d);
          }
        }
      });
}

}  // namespace sqac::ops
