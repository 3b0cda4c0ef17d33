#include "nic/kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace nic::kernels {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Upper bound on im2col buffer elements; larger images are processed in
// bands of output rows.
constexpr std::size_t kColBudget = std::size_t{1} << 22;

// Geometry of a strided "same" convolution from a large grid [c_in, h, w] to
// a small grid [c_out, ho, wo]. Transposed convolutions use the same geometry
// with the roles of the grids swapped.
struct ConvGeom {
  std::size_t c_in, h, w;
  std::size_t c_out, ho, wo;
  std::size_t k, pad, stride;

  std::size_t col_rows() const { return c_in * k * k; }
  std::size_t out_pixels() const { return ho * wo; }
  std::size_t band_rows() const {
    const std::size_t per_row = std::max<std::size_t>(1, col_rows() * wo);
    return std::clamp<std::size_t>(kColBudget / per_row, 1, std::max<std::size_t>(ho, 1));
  }
};

void check_stride(std::size_t h, std::size_t w, int stride) {
  require_shape(stride >= 1, "stride must be positive");
  require_shape(h % static_cast<std::size_t>(stride) == 0 && w % static_cast<std::size_t>(stride) == 0,
                "spatial dims " + std::to_string(h) + "x" + std::to_string(w) +
                    " not divisible by stride " + std::to_string(stride));
}

void check_kernel(std::size_t k0, std::size_t k1) {
  require_shape(k0 == k1 && k0 % 2 == 1, "kernel must be square with odd size");
}

template <typename T>
ConvGeom conv_geometry(const Tensor<T>& x, const Tensor<T>& w, int stride) {
  require_shape(x.rank() == 3, "conv2d input must be [C,H,W], got " + shape_string(x.shape()));
  require_shape(w.rank() == 4, "conv2d weight must be [C_out,C_in,k,k], got " + shape_string(w.shape()));
  require_shape(w.dim(1) == x.dim(0), "conv2d weight " + shape_string(w.shape()) +
                                          " does not match input " + shape_string(x.shape()));
  check_kernel(w.dim(2), w.dim(3));
  check_stride(x.dim(1), x.dim(2), stride);
  const auto s = static_cast<std::size_t>(stride);
  return ConvGeom{x.dim(0), x.dim(1), x.dim(2), w.dim(0), x.dim(1) / s, x.dim(2) / s,
                  w.dim(2), w.dim(2) / 2, s};
}

template <typename T>
ConvGeom transpose_geometry(const Tensor<T>& x, const Tensor<T>& w, int stride) {
  require_shape(x.rank() == 3, "conv2d_transpose input must be [C,H,W], got " + shape_string(x.shape()));
  require_shape(w.rank() == 4,
                "conv2d_transpose weight must be [C_in,C_out,k,k], got " + shape_string(w.shape()));
  require_shape(w.dim(0) == x.dim(0), "conv2d_transpose weight " + shape_string(w.shape()) +
                                          " does not match input " + shape_string(x.shape()));
  check_kernel(w.dim(2), w.dim(3));
  require_shape(stride >= 1, "stride must be positive");
  const auto s = static_cast<std::size_t>(stride);
  return ConvGeom{w.dim(1), x.dim(1) * s, x.dim(2) * s, x.dim(0), x.dim(1), x.dim(2),
                  w.dim(2), w.dim(2) / 2, s};
}

template <typename T>
void check_bias(const Tensor<T>& b, std::size_t channels) {
  require_shape(b.empty() || (b.rank() == 1 && b.dim(0) == channels),
                "bias " + shape_string(b.shape()) + " does not match " + std::to_string(channels) +
                    " channels");
}

// col[(c*k + ky)*k + kx][p] = x[c][oy*s - pad + ky][ox*s - pad + kx] for the
// output rows [oy0, oy1), p counted from oy0.
template <typename T>
void im2col(const T* x, const ConvGeom& g, std::size_t oy0, std::size_t oy1, T* col) {
  const std::size_t n = (oy1 - oy0) * g.wo;
  const auto rows = static_cast<std::int64_t>(g.col_rows());
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::size_t c = static_cast<std::size_t>(r) / (g.k * g.k);
    const std::size_t ky = (static_cast<std::size_t>(r) / g.k) % g.k;
    const std::size_t kx = static_cast<std::size_t>(r) % g.k;
    T* dst = col + static_cast<std::size_t>(r) * n;
    const T* plane = x + c * g.h * g.w;
    for (std::size_t oy = oy0; oy < oy1; ++oy) {
      const auto iy = static_cast<std::int64_t>(oy * g.stride + ky) - static_cast<std::int64_t>(g.pad);
      T* out = dst + (oy - oy0) * g.wo;
      if (iy < 0 || iy >= static_cast<std::int64_t>(g.h)) {
        std::fill(out, out + g.wo, T(0));
        continue;
      }
      const T* src = plane + static_cast<std::size_t>(iy) * g.w;
      for (std::size_t ox = 0; ox < g.wo; ++ox) {
        const auto ix = static_cast<std::int64_t>(ox * g.stride + kx) - static_cast<std::int64_t>(g.pad);
        out[ox] = (ix < 0 || ix >= static_cast<std::int64_t>(g.w)) ? T(0) : src[ix];
      }
    }
  }
}

// Adjoint of im2col: accumulates col into x. Parallel over channels; each
// channel owns its k*k rows, so every x element sees a fixed summation order.
template <typename T>
void col2im(const T* col, const ConvGeom& g, std::size_t oy0, std::size_t oy1, T* x) {
  const std::size_t n = (oy1 - oy0) * g.wo;
  const auto channels = static_cast<std::int64_t>(g.c_in);
#pragma omp parallel for schedule(static)
  for (std::int64_t ci = 0; ci < channels; ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    T* plane = x + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* src = col + ((c * g.k + ky) * g.k + kx) * n;
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const auto iy = static_cast<std::int64_t>(oy * g.stride + ky) - static_cast<std::int64_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::int64_t>(g.h)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const T* row = src + (oy - oy0) * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::int64_t>(ox * g.stride + kx) - static_cast<std::int64_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::int64_t>(g.w)) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void add_bias(Tensor<T>& y, const Tensor<T>& b) {
  if (b.empty()) return;
  const std::size_t plane = y.size() / y.dim(0);
  const auto channels = static_cast<std::int64_t>(y.dim(0));
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < channels; ++c) {
    T* p = y.data() + static_cast<std::size_t>(c) * plane;
    const T v = b[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < plane; ++i) p[i] += v;
  }
}

template <typename T>
Tensor<T> channel_sums(const Tensor<T>& y) {
  const std::size_t channels = y.dim(0);
  const std::size_t plane = y.size() / channels;
  Tensor<T> out({channels});
  const auto n = static_cast<std::int64_t>(channels);
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < n; ++c) {
    const T* p = y.data() + static_cast<std::size_t>(c) * plane;
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += p[i];
    out[static_cast<std::size_t>(c)] = static_cast<T>(acc);
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride) {
  const ConvGeom g = conv_geometry(x, w, stride);
  check_bias(b, g.c_out);
  Tensor<T> y({g.c_out, g.ho, g.wo});
  ConstMatMap<T> weights(w.data(), g.c_out, g.col_rows());
  MatMap<T> out(y.data(), g.c_out, g.out_pixels());
  std::vector<T> col;
  const std::size_t band = g.band_rows();
  for (std::size_t oy0 = 0; oy0 < g.ho; oy0 += band) {
    const std::size_t oy1 = std::min(g.ho, oy0 + band);
    const std::size_t n = (oy1 - oy0) * g.wo;
    col.resize(g.col_rows() * n);
    im2col(x.data(), g, oy0, oy1, col.data());
    ConstMatMap<T> cols(col.data(), g.col_rows(), n);
    out.middleCols(oy0 * g.wo, n).noalias() = weights * cols;
  }
  add_bias(y, b);
  return y;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                             int stride, bool need_dx, bool need_dw) {
  const ConvGeom g = conv_geometry(x, w, stride);
  require_shape(dy.shape() == Shape({g.c_out, g.ho, g.wo}),
                "conv2d_backward: output gradient has shape " + shape_string(dy.shape()));
  ConvGrads<T> grads;
  ConstMatMap<T> weights(w.data(), g.c_out, g.col_rows());
  ConstMatMap<T> grad_out(dy.data(), g.c_out, g.out_pixels());
  if (need_dx) grads.dx = Tensor<T>(x.shape());
  if (need_dw) {
    grads.dw = Tensor<T>(w.shape());
    grads.db = channel_sums(dy);
  }
  std::vector<T> col;
  const std::size_t band = g.band_rows();
  for (std::size_t oy0 = 0; oy0 < g.ho; oy0 += band) {
    const std::size_t oy1 = std::min(g.ho, oy0 + band);
    const std::size_t n = (oy1 - oy0) * g.wo;
    col.resize(g.col_rows() * n);
    if (need_dw) {
      im2col(x.data(), g, oy0, oy1, col.data());
      ConstMatMap<T> cols(col.data(), g.col_rows(), n);
      MatMap<T> dw(grads.dw.data(), g.c_out, g.col_rows());
      dw.noalias() += grad_out.middleCols(oy0 * g.wo, n) * cols.transpose();
    }
    if (need_dx) {
      MatMap<T> dcol(col.data(), g.col_rows(), n);
      dcol.noalias() = weights.transpose() * grad_out.middleCols(oy0 * g.wo, n);
      col2im(col.data(), g, oy0, oy1, grads.dx.data());
    }
  }
  return grads;
}

template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride) {
  const ConvGeom g = transpose_geometry(x, w, stride);
  check_bias(b, g.c_in);
  Tensor<T> y({g.c_in, g.h, g.w});
  ConstMatMap<T> weights(w.data(), g.c_out, g.col_rows());
  ConstMatMap<T> input(x.data(), g.c_out, g.out_pixels());
  std::vector<T> col;
  const std::size_t band = g.band_rows();
  for (std::size_t oy0 = 0; oy0 < g.ho; oy0 += band) {
    const std::size_t oy1 = std::min(g.ho, oy0 + band);
    const std::size_t n = (oy1 - oy0) * g.wo;
    col.resize(g.col_rows() * n);
    MatMap<T> cols(col.data(), g.col_rows(), n);
    cols.noalias() = weights.transpose() * input.middleCols(oy0 * g.wo, n);
    col2im(col.data(), g, oy0, oy1, y.data());
  }
  add_bias(y, b);
  return y;
}

template <typename T>
ConvGrads<T> conv2d_transpose_backward(const Tensor<T>& x, const Tensor<T>& w,
                                       const Tensor<T>& dy, int stride, bool need_dx,
                                       bool need_dw) {
  const ConvGeom g = transpose_geometry(x, w, stride);
  require_shape(dy.shape() == Shape({g.c_in, g.h, g.w}),
                "conv2d_transpose_backward: output gradient has shape " + shape_string(dy.shape()));
  ConvGrads<T> grads;
  ConstMatMap<T> weights(w.data(), g.c_out, g.col_rows());
  ConstMatMap<T> input(x.data(), g.c_out, g.out_pixels());
  if (need_dx) grads.dx = Tensor<T>(x.shape());
  if (need_dw) {
    grads.dw = Tensor<T>(w.shape());
    grads.db = channel_sums(dy);
  }
  std::vector<T> col;
  const std::size_t band = g.band_rows();
  for (std::size_t oy0 = 0; oy0 < g.ho; oy0 += band) {
    const std::size_t oy1 = std::min(g.ho, oy0 + band);
    const std::size_t n = (oy1 - oy0) * g.wo;
    col.resize(g.col_rows() * n);
    im2col(dy.data(), g, oy0, oy1, col.data());
    ConstMatMap<T> cols(col.data(), g.col_rows(), n);
    if (need_dx) {
      MatMap<T> dx(grads.dx.data(), g.c_out, g.out_pixels());
      dx.middleCols(oy0 * g.wo, n).noalias() = weights * cols;
    }
    if (need_dw) {
      MatMap<T> dw(grads.dw.data(), g.c_out, g.col_rows());
      dw.noalias() += input.middleCols(oy0 * g.wo, n) * cols.transpose();
    }
  }
  return grads;
}

namespace {

template <typename T>
void check_gdn(const Tensor<T>& x, const Tensor<T>& beta, const Tensor<T>& gamma) {
  require_shape(x.rank() == 3, "gdn input must be [C,H,W], got " + shape_string(x.shape()));
  const std::size_t c = x.dim(0);
  require_shape(beta.shape() == Shape({c}), "gdn beta " + shape_string(beta.shape()) +
                                                " does not match " + std::to_string(c) + " channels");
  require_shape(gamma.shape() == Shape({c, c}), "gdn gamma " + shape_string(gamma.shape()) +
                                                    " does not match " + std::to_string(c) + " channels");
}

// norm[i][n] = beta_i + sum_j gamma_ij x_j[n]^2
template <typename T>
RowMat<T> gdn_norm(const Tensor<T>& x, const Tensor<T>& beta, const Tensor<T>& gamma,
                   RowMat<T>& squares) {
  const std::size_t c = x.dim(0);
  const std::size_t n = x.size() / c;
  ConstMatMap<T> xs(x.data(), c, n);
  squares = xs.array().square().matrix();
  ConstMatMap<T> g(gamma.data(), c, c);
  RowMat<T> norm(c, n);
  norm.noalias() = g * squares;
  const auto channels = static_cast<std::int64_t>(c);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < channels; ++i) {
    norm.row(i).array() += beta[static_cast<std::size_t>(i)];
  }
  return norm;
}

}  // namespace

template <typename T>
Tensor<T> gdn(const Tensor<T>& x, const Tensor<T>& beta, const Tensor<T>& gamma, bool inverse) {
  check_gdn(x, beta, gamma);
  RowMat<T> squares;
  const RowMat<T> norm = gdn_norm(x, beta, gamma, squares);
  Tensor<T> y(x.shape());
  const std::size_t c = x.dim(0);
  const std::size_t n = x.size() / c;
  const auto channels = static_cast<std::int64_t>(c);
#pragma omp parallel for schedule(static)
  for (std::int64_t ii = 0; ii < channels; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const T* xi = x.data() + i * n;
    T* yi = y.data() + i * n;
    for (std::size_t p = 0; p < n; ++p) {
      const T s = std::sqrt(norm(ii, static_cast<std::int64_t>(p)));
      yi[p] = inverse ? xi[p] * s : xi[p] / s;
    }
  }
  return y;
}

template <typename T>
GdnGrads<T> gdn_backward(const Tensor<T>& x, const Tensor<T>& beta, const Tensor<T>& gamma,
                         const Tensor<T>& dy, bool inverse) {
  check_gdn(x, beta, gamma);
  require_shape(dy.shape() == x.shape(), "gdn_backward: gradient shape " + shape_string(dy.shape()));
  RowMat<T> squares;
  const RowMat<T> norm = gdn_norm(x, beta, gamma, squares);
  const std::size_t c = x.dim(0);
  const std::size_t n = x.size() / c;
  // u = dy * x * d(norm^{+-1/2})/d(norm)
  RowMat<T> u(c, n);
  GdnGrads<T> grads{Tensor<T>(x.shape()), Tensor<T>({c}), Tensor<T>({c, c})};
  const auto channels = static_cast<std::int64_t>(c);
#pragma omp parallel for schedule(static)
  for (std::int64_t ii = 0; ii < channels; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const T* xi = x.data() + i * n;
    const T* gi = dy.data() + i * n;
    T* dxi = grads.dx.data() + i * n;
    double acc = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      const T nv = norm(ii, static_cast<std::int64_t>(p));
      const T s = std::sqrt(nv);
      T up;
      if (inverse) {
        dxi[p] = gi[p] * s;
        up = T(0.5) * gi[p] * xi[p] / s;
      } else {
        dxi[p] = gi[p] / s;
        up = T(-0.5) * gi[p] * xi[p] / (nv * s);
      }
      u(ii, static_cast<std::int64_t>(p)) = up;
      acc += up;
    }
    grads.dbeta[i] = static_cast<T>(acc);
  }
  MatMap<T> dgamma(grads.dgamma.data(), c, c);
  dgamma.noalias() = u * squares.transpose();
  ConstMatMap<T> g(gamma.data(), c, c);
  RowMat<T> back(c, n);
  back.noalias() = g.transpose() * u;
#pragma omp parallel for schedule(static)
  for (std::int64_t kk = 0; kk < channels; ++kk) {
    const auto k = static_cast<std::size_t>(kk);
    const T* xk = x.data() + k * n;
    T* dxk = grads.dx.data() + k * n;
    for (std::size_t p = 0; p < n; ++p) dxk[p] += T(2) * xk[p] * back(kk, static_cast<std::int64_t>(p));
  }
  return grads;
}

namespace reference {

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride) {
  const ConvGeom g = conv_geometry(x, w, stride);
  check_bias(b, g.c_out);
  Tensor<T> y({g.c_out, g.ho, g.wo});
  for (std::size_t co = 0; co < g.c_out; ++co) {
    for (std::size_t oy = 0; oy < g.ho; ++oy) {
      for (std::size_t ox = 0; ox < g.wo; ++ox) {
        double acc = b.empty() ? 0.0 : static_cast<double>(b[co]);
        for (std::size_t ci = 0; ci < g.c_in; ++ci) {
          for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
              const auto iy = static_cast<std::int64_t>(oy * g.stride + ky) - static_cast<std::int64_t>(g.pad);
              const auto ix = static_cast<std::int64_t>(ox * g.stride + kx) - static_cast<std::int64_t>(g.pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<std::int64_t>(g.h) ||
                  ix >= static_cast<std::int64_t>(g.w)) {
                continue;
              }
              acc += static_cast<double>(w[((co * g.c_in + ci) * g.k + ky) * g.k + kx]) *
                     static_cast<double>(x[(ci * g.h + static_cast<std::size_t>(iy)) * g.w +
                                           static_cast<std::size_t>(ix)]);
            }
          }
        }
        y[(co * g.ho + oy) * g.wo + ox] = static_cast<T>(acc);
      }
    }
  }
  return y;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                             int stride) {
  const ConvGeom g = conv_geometry(x, w, stride);
  std::vector<double> dx(x.size(), 0.0), dw(w.size(), 0.0), db(g.c_out, 0.0);
  for (std::size_t co = 0; co < g.c_out; ++co) {
    for (std::size_t oy = 0; oy < g.ho; ++oy) {
      for (std::size_t ox = 0; ox < g.wo; ++ox) {
        const double go = dy[(co * g.ho + oy) * g.wo + ox];
        db[co] += go;
        for (std::size_t ci = 0; ci < g.c_in; ++ci) {
          for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
              const auto iy = static_cast<std::int64_t>(oy * g.stride + ky) - static_cast<std::int64_t>(g.pad);
              const auto ix = static_cast<std::int64_t>(ox * g.stride + kx) - static_cast<std::int64_t>(g.pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<std::int64_t>(g.h) ||
                  ix >= static_cast<std::int64_t>(g.w)) {
                continue;
              }
              const std::size_t xi = (ci * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix);
              const std::size_t wi = ((co * g.c_in + ci) * g.k + ky) * g.k + kx;
              dx[xi] += static_cast<double>(w[wi]) * go;
              dw[wi] += static_cast<double>(x[xi]) * go;
            }
          }
        }
      }
    }
  }
  auto to_tensor = [](const Shape& s, const std::vector<double>& v) {
    return Tensor<T>(s, std::vector<T>(v.begin(), v.end()));
  };
  return {to_tensor(x.shape(), dx), to_tensor(w.shape(), dw), to_tensor({g.c_out}, db)};
}

template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride) {
  const ConvGeom g = transpose_geometry(x, w, stride);
  check_bias(b, g.c_in);
  std::vector<double> y(g.c_in * g.h * g.w, 0.0);
  for (std::size_t ci = 0; ci < g.c_out; ++ci) {
    for (std::size_t iy = 0; iy < g.ho; ++iy) {
      for (std::size_t ix = 0; ix < g.wo; ++ix) {
        const double v = x[(ci * g.ho + iy) * g.wo + ix];
        for (std::size_t co = 0; co < g.c_in; ++co) {
          for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
              const auto oy = static_cast<std::int64_t>(iy * g.stride + ky) - static_cast<std::int64_t>(g.pad);
              const auto ox = static_cast<std::int64_t>(ix * g.stride + kx) - static_cast<std::int64_t>(g.pad);
              if (oy < 0 || ox < 0 || oy >= static_cast<std::int64_t>(g.h) ||
                  ox >= static_cast<std::int64_t>(g.w)) {
                continue;
              }
              y[(co * g.h + static_cast<std::size_t>(oy)) * g.w + static_cast<std::size_t>(ox)] +=
                  v * static_cast<double>(w[((ci * g.c_in + co) * g.k + ky) * g.k + kx]);
            }
          }
        }
      }
    }
  }
  Tensor<T> out({g.c_in, g.h, g.w});
  for (std::size_t co = 0; co < g.c_in; ++co) {
    for (std::size_t p = 0; p < g.h * g.w; ++p) {
      out[co * g.h * g.w + p] =
          static_cast<T>(y[co * g.h * g.w + p] + (b.empty() ? 0.0 : static_cast<double>(b[co])));
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_transpose_backward(const Tensor<T>& x, const Tensor<T>& w,
                                       const Tensor<T>& dy, int stride) {
  const ConvGeom g = transpose_geometry(x, w, stride);
  std::vector<double> dx(x.size(), 0.0), dw(w.size(), 0.0), db(g.c_in, 0.0);
  for (std::size_t co = 0; co < g.c_in; ++co) {
    for (std::size_t p = 0; p < g.h * g.w; ++p) db[co] += dy[co * g.h * g.w + p];
  }
  for (std::size_t ci = 0; ci < g.c_out; ++ci) {
    for (std::size_t iy = 0; iy < g.ho; ++iy) {
      for (std::size_t ix = 0; ix < g.wo; ++ix) {
        const std::size_t xi = (ci * g.ho + iy) * g.wo + ix;
        for (std::size_t co = 0; co < g.c_in; ++co) {
          for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
              const auto oy = static_cast<std::int64_t>(iy * g.stride + ky) - static_cast<std::int64_t>(g.pad);
              const auto ox = static_cast<std::int64_t>(ix * g.stride + kx) - static_cast<std::int64_t>(g.pad);
              if (oy < 0 || ox < 0 || oy >= static_cast<std::int64_t>(g.h) ||
                  ox >= static_cast<std::int64_t>(g.w)) {
                continue;
              }
              const double go = dy[(co * g.h + static_cast<std::size_t>(oy)) * g.w + static_cast<std::size_t>(ox)];
              const std::size_t wi = ((ci * g.c_in + co) * g.k + ky) * g.k + kx;
              dx[xi] += static_cast<double>(w[wi]) * go;
              dw[wi] += static_cast<double>(x[xi]) * go;
            }
          }
        }
      }
    }
  }
  auto to_tensor = [](const Shape& s, const std::vector<double>& v) {
    return Tensor<T>(s, std::vector<T>(v.begin(), v.end()));
  };
  return {to_tensor(x.shape(), dx), to_tensor(w.shape(), dw), to_tensor({g.c_in}, db)};
}

template <typename T>
Tensor<T> gdn(const Tensor<T>& x, const Tensor<T>& beta, const Tensor<T>& gamma, bool inverse) {
  check_gdn(x, beta, gamma);
  const std::size_t c = x.dim(0);
  const std::size_t n = x.size() / c;
  Tensor<T> y(x.shape());
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t i = 0; i < c; ++i) {
      double norm = beta[i];
      for (std::size_t j = 0; j < c; ++j) {
        const double xj = x[j * n + p];
        norm += static_cast<double>(gamma[i * c + j]) * xj * xj;
      }
      const double xi = x[i * n + p];
      y[i * n + p] = static_cast<T>(inverse ? xi * std::sqrt(norm) : xi / std::sqrt(norm));
    }
  }
  return y;
}

template <typename T>
GdnGrads<T> gdn_backward(const Tensor<T>& x, const Tensor<T>& beta, const Tensor<T>& gamma,
                         const Tensor<T>& dy, bool inverse) {
  check_gdn(x, beta, gamma);
  const std::size_t c = x.dim(0);
  const std::size_t n = x.size() / c;
  std::vector<double> dx(x.size(), 0.0), dbeta(c, 0.0), dgamma(c * c, 0.0), norm(c);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t i = 0; i < c; ++i) {
      norm[i] = beta[i];
      for (std::size_t j = 0; j < c; ++j) {
        const double xj = x[j * n + p];
        norm[i] += static_cast<double>(gamma[i * c + j]) * xj * xj;
      }
    }
    for (std::size_t i = 0; i < c; ++i) {
      const double xi = x[i * n + p];
      const double gi = dy[i * n + p];
      const double s = std::sqrt(norm[i]);
      // dy_i/dnorm_i
      const double dnorm = inverse ? 0.5 * xi / s : -0.5 * xi / (norm[i] * s);
      dx[i * n + p] += gi * (inverse ? s : 1.0 / s);
      dbeta[i] += gi * dnorm;
      for (std::size_t j = 0; j < c; ++j) {
        const double xj = x[j * n + p];
        dgamma[i * c + j] += gi * dnorm * xj * xj;
        dx[j * n + p] += gi * dnorm * 2.0 * static_cast<double>(gamma[i * c + j]) * xj;
      }
    }
  }
  auto to_tensor = [](const Shape& s, const std::vector<double>& v) {
    return Tensor<T>(s, std::vector<T>(v.begin(), v.end()));
  };
  return {to_tensor(x.shape(), dx), to_tensor({c}, dbeta), to_tensor({c, c}, dgamma)};
}

}  // namespace reference

#define NIC_INSTANTIATE_KERNELS(T)                                                                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int);            \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, \
                                        bool, bool);                                               \
  template Tensor<T> conv2d_transpose(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int);  \
  template ConvGrads<T> conv2d_transpose_backward(const Tensor<T>&, const Tensor<T>&,              \
                                                  const Tensor<T>&, int, bool, bool);              \
  template Tensor<T> gdn(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, bool);              \
  template GdnGrads<T> gdn_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                    const Tensor<T>&, bool);                                       \
  template Tensor<T> reference::conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int); \
  template ConvGrads<T> reference::conv2d_backward(const Tensor<T>&, const Tensor<T>&,             \
                                                   const Tensor<T>&, int);                         \
  template Tensor<T> reference::conv2d_transpose(const Tensor<T>&, const Tensor<T>&,               \
                                                 const Tensor<T>&, int);                           \
  template ConvGrads<T> reference::conv2d_transpose_backward(const Tensor<T>&, const Tensor<T>&,   \
                                                             const Tensor<T>&, int);               \
  template Tensor<T> reference::gdn(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, bool);   \
  template GdnGrads<T> reference::gdn_backward(const Tensor<T>&, const Tensor<T>&,                 \
                                               const Tensor<T>&, const Tensor<T>&, bool);

NIC_INSTANTIATE_KERNELS(float)
NIC_INSTANTIATE_KERNELS(double)

}  // namespace nic::kernels
