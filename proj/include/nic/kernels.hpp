#pragma once

// Numeric kernels behind the differentiable ops.
//
// The functions in nic::kernels are the production path: im2col/col2im and
// the GDN elementwise passes are OpenMP-parallel over channels, dense products
// go through Eigen. Every parallel loop writes disjoint outputs and keeps a
// fixed reduction order per output element, so results do not depend on the
// thread count.
//
// nic::kernels::reference holds direct serial loops with 64-bit accumulation.
// They are slow and exist for tests and the benchmark only.
//
// Convolutions are cross-correlations with square odd kernels and "same" zero
// padding (pad = kernel / 2). Weight layouts:
//   conv2d            weight [C_out, C_in, k, k]
//   conv2d_transpose  weight [C_in, C_out, k, k]
// conv2d_transpose is the adjoint of conv2d for the same weight tensor, and
// maps [C, h, w] to [C_out, h * stride, w * stride].

#include "nic/tensor.hpp"

namespace nic::kernels {

template <typename T>
struct ConvGrads {
  Tensor<T> dx;
  Tensor<T> dw;
  Tensor<T> db;
};

template <typename T>
struct GdnGrads {
  Tensor<T> dx;
  Tensor<T> dbeta;
  Tensor<T> dgamma;
};

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                             int stride, bool need_dx, bool need_dw);

template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride);

template <typename T>
ConvGrads<T> conv2d_transpose_backward(const Tensor<T>& x, const Tensor<T>& w,
                                       const Tensor<T>& dy, int stride, bool need_dx,
                                       bool need_dw);

// y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2), or x_i * sqrt(...) when
// inverse is set. x is [C, H, W], beta [C], gamma [C, C].
template <typename T>
Tensor<T> gdn(const Tensor<T>& x, const Tensor<T>& beta, const Tensor<T>& gamma, bool inverse);

template <typename T>
GdnGrads<T> gdn_backward(const Tensor<T>& x, const Tensor<T>& beta, const Tensor<T>& gamma,
                         const Tensor<T>& dy, bool inverse);

namespace reference {

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                             int stride);

template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride);

template <typename T>
ConvGrads<T> conv2d_transpose_backward(const Tensor<T>& x, const Tensor<T>& w,
                                       const Tensor<T>& dy, int stride);

template <typename T>
Tensor<T> gdn(const Tensor<T>& x, const Tensor<T>& beta, const Tensor<T>& gamma, bool inverse);

template <typename T>
GdnGrads<T> gdn_backward(const Tensor<T>& x, const Tensor<T>& beta, const Tensor<T>& gamma,
                         const Tensor<T>& dy, bool inverse);

}  // namespace reference
}  // namespace nic::kernels
