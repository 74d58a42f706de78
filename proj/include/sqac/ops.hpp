#pragma once

// Differentiable operations. Each records its backward rule on the active tape
// when any input requires grad; without an active tape they are plain
// inference kernels.

#include <cstddef>

#include "sqac/tensor.hpp"

namespace sqac::ops {

// (M x K) * (K x N) -> (M x N)
Tensor matmul(const Tensor& a, const Tensor& b);

struct Conv2dOptions {
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;  // "valid" unless set
  std::size_t pad_w = 0;
};

// x: (C, H, W), weight: (O, C, KH, KW), bias: (O) or undefined -> (O, H', W')
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv2dOptions& opt = {});

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t pad);

// Elementwise sum of equal shapes, or bias-add of a rank-1 `b` over the
// trailing dimension of `a`.
Tensor add(const Tensor& a, const Tensor& b);

// Elementwise product of equal shapes.
Tensor mul(const Tensor& a, const Tensor& b);

// scale * x + shift with constant scale and shift.
Tensor affine(const Tensor& x, float scale, float shift);

// Normalizes over the trailing dimension; gamma and beta have that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

// Softmax over the trailing dimension.
Tensor softmax(const Tensor& x);

Tensor leaky_relu(const Tensor& x, float slope);
Tensor sigmoid(const Tensor& x);

// Mean of all elements -> scalar.
Tensor mean(const Tensor& x);

// 2-D transpose.
Tensor transpose(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

// Multi-head attention without projections: q (Tq x D), k and v (Tk x D);
// D is split evenly into `heads` slices. Scores are scaled by 1/sqrt(D/heads).
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    std::size_t heads);

}  // namespace sqac::ops
