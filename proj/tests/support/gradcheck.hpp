#pragma once

// Finite-difference oracle for the autograd engine. Every op has an
// independent float64 reference forward written with naive loops; the
// analytic float32 gradient from the tape is compared against central
// differences of that reference.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sqac/ops.hpp"
#include "sqac/tensor.hpp"

namespace sqac::testing {

using Vec = std::vector<double>;

namespace ref {

inline Vec matmul(const Vec& a, const Vec& b, std::size_t m, std::size_t k, std::size_t n) {
  Vec c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

struct ConvDims {
  std::size_t c, h, w, o, kh, kw, sh, sw, ph, pw;
  std::size_t oh() const { return (h + 2 * ph - kh) / sh + 1; }
  std::size_t ow() const { return (w + 2 * pw - kw) / sw + 1; }
};

inline Vec conv2d(const Vec& x, const Vec& wt, const Vec& b, const ConvDims& d) {
  Vec y(d.o * d.oh() * d.ow(), 0.0);
  for (std::size_t o = 0; o < d.o; ++o)
    for (std::size_t oy = 0; oy < d.oh(); ++oy)
      for (std::size_t ox = 0; ox < d.ow(); ++ox) {
        double s = b.empty() ? 0.0 : b[o];
        for (std::size_t c = 0; c < d.c; ++c)
          for (std::size_t ky = 0; ky < d.kh; ++ky)
            for (std::size_t kx = 0; kx < d.kw; ++kx) {
              const long iy = static_cast<long>(oy * d.sh + ky) - static_cast<long>(d.ph);
              const long ix = static_cast<long>(ox * d.sw + kx) - static_cast<long>(d.pw);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(d.h) || ix >= static_cast<long>(d.w))
                continue;
              s += wt[((o * d.c + c) * d.kh + ky) * d.kw + kx] *
                   x[(c * d.h + static_cast<std::size_t>(iy)) * d.w + static_cast<std::size_t>(ix)];
            }
        y[(o * d.oh() + oy) * d.ow() + ox] = s;
      }
  return y;
}

inline Vec layer_norm(const Vec& x, const Vec& g, const Vec& b, std::size_t d, double eps) {
  Vec y(x.size());
  for (std::size_t r = 0; r < x.size() / d; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[r * d + j];
    mu /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) var += (x[r * d + j] - mu) * (x[r * d + j] - mu);
    var /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j)
      y[r * d + j] = (x[r * d + j] - mu) / std::sqrt(var + eps) * g[j] + b[j];
  }
  return y;
}

inline Vec softmax(const Vec& x, std::size_t d) {
  Vec y(x.size());
  for (std::size_t r = 0; r < x.size() / d; ++r) {
    double mx = x[r * d];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, x[r * d + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += std::exp(x[r * d + j] - mx);
    for (std::size_t j = 0; j < d; ++j) y[r * d + j] = std::exp(x[r * d + j] - mx) / s;
  }
  return y;
}

inline Vec attention(const Vec& q, const Vec& k, const Vec& v, std::size_t tq, std::size_t tk,
                     std::size_t d, std::size_t heads) {
  const std::size_t dh = d / heads;
  Vec out(tq * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < tq; ++i) {
      Vec s(tk);
      for (std::size_t j = 0; j < tk; ++j) {
        double acc = 0.0;
        for (std::size_t e = 0; e < dh; ++e) acc += q[i * d + h * dh + e] * k[j * d + h * dh + e];
        s[j] = acc / std::sqrt(static_cast<double>(dh));
      }
      s = softmax(s, tk);
      for (std::size_t j = 0; j < tk; ++j)
        for (std::size_t e = 0; e < dh; ++e) out[i * d + h * dh + e] += s[j] * v[j * d + h * dh + e];
    }
  return out;
}

}  // namespace ref

// One randomized instance of an op under test.
struct GradInstance {
  std::vector<Shape> shapes;
  std::function<Tensor(const std::vector<Tensor>&)> run;
  std::function<Vec(const std::vector<Vec>&)> reference;
  double min_abs_input = 0.0;  // keeps inputs away from kinks
};

struct GradResult {
  double max_rel_error = 0.0;
  double max_forward_error = 0.0;
};

inline double rel_error(const Vec& a, const Vec& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-6);
}

// Checks d/dx of L = sum(r * op(x)) for a fixed random projection r.
inline GradResult check_instance(const GradInstance& inst, std::mt19937_64& rng, double h = 1e-3) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec> inputs;
  for (const Shape& s : inst.shapes) {
    Vec v(shape_numel(s));
    for (double& x : v) {
      do {
        x = u(rng);
      } while (std::abs(x) < inst.min_abs_input);
      x = static_cast<double>(static_cast<float>(x));
    }
    inputs.push_back(std::move(v));
  }
  const Vec ref_out = inst.reference(inputs);
  Vec proj(ref_out.size());
  for (double& r : proj) r = static_cast<double>(static_cast<float>(u(rng)));

  auto objective = [&](const std::vector<Vec>& in) {
    const Vec y = inst.reference(in);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += proj[i] * y[i];
    return s;
  };

  std::vector<Tensor> tensors;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<float> f(inputs[i].begin(), inputs[i].end());
    tensors.emplace_back(inst.shapes[i], std::move(f));
    tensors.back().set_requires_grad(true);
  }
  Tape tape;
  GradResult result;
  {
    TapeScope scope(tape);
    Tensor y = inst.run(tensors);
    Vec yv(y.data().begin(), y.data().end());
    result.max_forward_error = rel_error(yv, ref_out);
    std::vector<float> pf(proj.begin(), proj.end());
    Tensor r(y.shape(), std::move(pf));
    // sum(r * y) expressed as n * mean(r * y)
    Tensor loss = ops::affine(ops::mean(ops::mul(y, r)), static_cast<float>(y.numel()), 0.0f);
    tape.backward(loss);
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Vec analytic(tensors[i].grad().begin(), tensors[i].grad().end());
    Vec fd(inputs[i].size());
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      std::vector<Vec> plus = inputs, minus = inputs;
      plus[i][j] += h;
      minus[i][j] -= h;
      fd[j] = (objective(plus) - objective(minus)) / (2.0 * h);
    }
    result.max_rel_error = std::max(result.max_rel_error, rel_error(analytic, fd));
  }
  return result;
}

struct OpCase {
  std::string name;
  std::function<GradInstance(std::mt19937_64&)> make;
};

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Randomized generators for every differentiable op kind.
inline std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  cases.push_back({"matmul", [](std::mt19937_64& rng) {
                     const std::size_t m = pick(rng, 1, 4), k = pick(rng, 1, 5), n = pick(rng, 1, 20);
                     return GradInstance{{{m, k}, {k, n}},
                                         [](const std::vector<Tensor>& t) { return ops::matmul(t[0], t[1]); },
                                         [=](const std::vector<Vec>& v) { return ref::matmul(v[0], v[1], m, k, n); }};
                   }});
  cases.push_back({"conv2d", [](std::mt19937_64& rng) {
                     ref::ConvDims d{};
                     d.c = pick(rng, 1, 3);
                     d.o = pick(rng, 1, 3);
                     d.kh = pick(rng, 1, 3);
                     d.kw = pick(rng, 1, 3);
                     d.sh = pick(rng, 1, 2);
                     d.sw = pick(rng, 1, 2);
                     d.ph = pick(rng, 0, 1);
                     d.pw = pick(rng, 0, 1);
                     d.h = pick(rng, 3, 7);
                     d.w = pick(rng, 3, 18);
                     ops::Conv2dOptions opt{d.sh, d.sw, d.ph, d.pw};
                     return GradInstance{
                         {{d.c, d.h, d.w}, {d.o, d.c, d.kh, d.kw}, {d.o}},
                         [opt](const std::vector<Tensor>& t) { return ops::conv2d(t[0], t[1], t[2], opt); },
                         [d](const std::vector<Vec>& v) { return ref::conv2d(v[0], v[1], v[2], d); }};
                   }});
  cases.push_back({"add", [](std::mt19937_64& rng) {
                     const std::size_t r = pick(rng, 1, 4), c = pick(rng, 1, 6);
                     return GradInstance{{{r, c}, {r, c}},
                                         [](const std::vector<Tensor>& t) { return ops::add(t[0], t[1]); },
                                         [](const std::vector<Vec>& v) {
                                           Vec o(v[0]);
                                           for (std::size_t i = 0; i < o.size(); ++i) o[i] += v[1][i];
                                           return o;
                                         }};
                   }});
  cases.push_back({"bias_add", [](std::mt19937_64& rng) {
                     const std::size_t r = pick(rng, 1, 4), c = pick(rng, 1, 6);
                     return GradInstance{{{r, c}, {c}},
                                         [](const std::vector<Tensor>& t) { return ops::add(t[0], t[1]); },
                                         [c](const std::vector<Vec>& v) {
                                           Vec o(v[0]);
                                           for (std::size_t i = 0; i < o.size(); ++i) o[i] += v[1][i % c];
                                           return o;
                                         }};
                   }});
  cases.push_back({"mul", [](std::mt19937_64& rng) {
                     const std::size_t n = pick(rng, 1, 12);
                     return GradInstance{{{n}, {n}},
                                         [](const std::vector<Tensor>& t) { return ops::mul(t[0], t[1]); },
                                         [](const std::vector<Vec>& v) {
                                           Vec o(v[0]);
                                           for (std::size_t i = 0; i < o.size(); ++i) o[i] *= v[1][i];
                                           return o;
                                         }};
                   }});
  cases.push_back({"affine", [](std::mt19937_64& rng) {
                     const std::size_t n = pick(rng, 1, 12);
                     const float s = static_cast<float>(pick(rng, 1, 5)) * 0.5f;
                     return GradInstance{{{n}},
                                         [s](const std::vector<Tensor>& t) { return ops::affine(t[0], s, 0.25f); },
                                         [s](const std::vector<Vec>& v) {
                                           Vec o(v[0]);
                                           for (double& x : o) x = s * x + 0.25;
                                           return o;
                                         }};
                   }});
  cases.push_back({"layer_norm", [](std::mt19937_64& rng) {
                     // d = 2 normalizes every row to (+-1, -+1); its input gradient vanishes.
                     const std::size_t r = pick(rng, 1, 4), d = pick(rng, 3, 8);
                     return GradInstance{
                         {{r, d}, {d}, {d}},
                         [](const std::vector<Tensor>& t) { return ops::layer_norm(t[0], t[1], t[2], 1e-5f); },
                         [d](const std::vector<Vec>& v) { return ref::layer_norm(v[0], v[1], v[2], d, 1e-5); }};
                   }});
  cases.push_back({"softmax", [](std::mt19937_64& rng) {
                     const std::size_t r = pick(rng, 1, 4), d = pick(rng, 1, 8);
                     return GradInstance{{{r, d}},
                                         [](const std::vector<Tensor>& t) { return ops::softmax(t[0]); },
                                         [d](const std::vector<Vec>& v) { return ref::softmax(v[0], d); }};
                   }});
  cases.push_back({"leaky_relu", [](std::mt19937_64& rng) {
                     const std::size_t n = pick(rng, 1, 12);
                     GradInstance g{{{n}},
                                    [](const std::vector<Tensor>& t) { return ops::leaky_relu(t[0], 0.1f); },
                                    [](const std::vector<Vec>& v) {
                                      Vec o(v[0]);
                                      for (double& x : o) x = x >= 0.0 ? x : 0.1 * x;
                                      return o;
                                    }};
                     g.min_abs_input = 0.01;
                     return g;
                   }});
  cases.push_back({"sigmoid", [](std::mt19937_64& rng) {
                     const std::size_t n = pick(rng, 1, 12);
                     return GradInstance{{{n}},
                                         [](const std::vector<Tensor>& t) { return ops::sigmoid(t[0]); },
                                         [](const std::vector<Vec>& v) {
                                           Vec o(v[0]);
                                           for (double& x : o) x = 1.0 / (1.0 + std::exp(-x));
                                           return o;
                                         }};
                   }});
  cases.push_back({"mean", [](std::mt19937_64& rng) {
                     const std::size_t n = pick(rng, 1, 12);
                     return GradInstance{{{n}},
                                         [](const std::vector<Tensor>& t) { return ops::mean(t[0]); },
                                         [](const std::vector<Vec>& v) {
                                           double s = 0.0;
                                           for (double x : v[0]) s += x;
                                           return Vec{s / static_cast<double>(v[0].size())};
                                         }};
                   }});
  cases.push_back({"transpose", [](std::mt19937_64& rng) {
                     const std::size_t r = pick(rng, 1, 5), c = pick(rng, 1, 5);
                     return GradInstance{{{r, c}},
                                         [](const std::vector<Tensor>& t) { return ops::transpose(t[0]); },
                                         [r, c](const std::vector<Vec>& v) {
                                           Vec o(r * c);
                                           for (std::size_t i = 0; i < r; ++i)
                                             for (std::size_t j = 0; j < c; ++j) o[j * r + i] = v[0][i * c + j];
                                           return o;
                                         }};
                   }});
  cases.push_back({"reshape", [](std::mt19937_64& rng) {
                     const std::size_t r = pick(rng, 1, 5), c = pick(rng, 1, 5);
                     return GradInstance{{{r, c}},
                                         [r, c](const std::vector<Tensor>& t) { return ops::reshape(t[0], {c * r}); },
                                         [](const std::vector<Vec>& v) { return v[0]; }};
                   }});
  cases.push_back({"scaled_dot_product_attention", [](std::mt19937_64& rng) {
                     const std::size_t tq = pick(rng, 1, 4), tk = pick(rng, 1, 5), heads = pick(rng, 1, 2),
                                       d = heads * pick(rng, 1, 3);
                     return GradInstance{{{tq, d}, {tk, d}, {tk, d}},
                                         [heads](const std::vector<Tensor>& t) {
                                           return ops::scaled_dot_product_attention(t[0], t[1], t[2], heads);
                                         },
                                         [=](const std::vector<Vec>& v) {
                                           return ref::attention(v[0], v[1], v[2], tq, tk, d, heads);
                                         }};
                   }});
  return cases;
}

}  // namespace sqac::testing
