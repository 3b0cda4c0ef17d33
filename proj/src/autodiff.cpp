#include "nic/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "nic/kernels.hpp"

namespace nic::ad {
namespace {

template <typename T>
const Tensor<T>& value_or_empty(const Tape<T>& tape, Var v) {
  static const Tensor<T> kEmpty;
  return v.valid() ? tape.value(v) : kEmpty;
}

template <typename T>
Var gdn_op(Tape<T>& tape, Var x, Var beta, Var gamma, bool inverse) {
  Tensor<T> y = kernels::gdn(tape.value(x), tape.value(beta), tape.value(gamma), inverse);
  return tape.record(inverse ? "igdn" : "gdn", std::move(y), {x, beta, gamma},
                     [=](Tape<T>& t, const Tensor<T>& g) {
                       auto grads = kernels::gdn_backward(t.value(x), t.value(beta), t.value(gamma),
                                                          g, inverse);
                       t.accumulate(x, grads.dx);
                       t.accumulate(beta, grads.dbeta);
                       t.accumulate(gamma, grads.dgamma);
                     });
}

}  // namespace

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var b, int stride) {
  Tensor<T> y = kernels::conv2d(tape.value(x), tape.value(w), value_or_empty(tape, b), stride);
  return tape.record("conv2d", std::move(y), {x, w, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    const bool need_dw = t.requires_grad(w) || t.requires_grad(b);
    auto grads = kernels::conv2d_backward(t.value(x), t.value(w), g, stride, t.requires_grad(x), need_dw);
    t.accumulate(x, grads.dx);
    t.accumulate(w, grads.dw);
    t.accumulate(b, grads.db);
  });
}

template <typename T>
Var conv2d_transpose(Tape<T>& tape, Var x, Var w, Var b, int stride) {
  Tensor<T> y = kernels::conv2d_transpose(tape.value(x), tape.value(w), value_or_empty(tape, b), stride);
  return tape.record("conv2d_transpose", std::move(y), {x, w, b},
                     [=](Tape<T>& t, const Tensor<T>& g) {
                       const bool need_dw = t.requires_grad(w) || t.requires_grad(b);
                       auto grads = kernels::conv2d_transpose_backward(
                           t.value(x), t.value(w), g, stride, t.requires_grad(x), need_dw);
                       t.accumulate(x, grads.dx);
                       t.accumulate(w, grads.dw);
                       t.accumulate(b, grads.db);
                     });
}

template <typename T>
Var gdn(Tape<T>& tape, Var x, Var beta, Var gamma) {
  return gdn_op(tape, x, beta, gamma, false);
}

template <typename T>
Var igdn(Tape<T>& tape, Var x, Var beta, Var gamma) {
  return gdn_op(tape, x, beta, gamma, true);
}

template <typename T>
Var channel_affine(Tape<T>& tape, Var x, Var scale, Var shift) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& sv = tape.value(scale);
  const Tensor<T>& bv = tape.value(shift);
  require_shape(xv.rank() == 3, "channel_affine input must be [C,H,W]");
  const std::size_t c = xv.dim(0);
  require_shape(sv.shape() == Shape({c}) && bv.shape() == Shape({c}),
                "channel_affine parameters must have " + std::to_string(c) + " entries");
  const std::size_t n = xv.size() / c;
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t p = 0; p < n; ++p) y[i * n + p] = sv[i] * xv[i * n + p] + bv[i];
  }
  return tape.record("channel_affine", std::move(y), {x, scale, shift},
                     [=](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& xs = t.value(x);
                       const Tensor<T>& ss = t.value(scale);
                       Tensor<T> dx(xs.shape()), ds({c}), db({c});
                       for (std::size_t i = 0; i < c; ++i) {
                         double acc_s = 0.0, acc_b = 0.0;
                         for (std::size_t p = 0; p < n; ++p) {
                           const T gp = g[i * n + p];
                           dx[i * n + p] = gp * ss[i];
                           acc_s += static_cast<double>(gp) * xs[i * n + p];
                           acc_b += gp;
                         }
                         ds[i] = static_cast<T>(acc_s);
                         db[i] = static_cast<T>(acc_b);
                       }
                       t.accumulate(x, dx);
                       t.accumulate(scale, ds);
                       t.accumulate(shift, db);
                     });
}

template <typename T>
Var concat(Tape<T>& tape, const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  if (parts.size() == 1) return parts.front();
  const Shape& first = tape.value(parts.front()).shape();
  require_shape(axis < first.size(), "concat axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (Var p : parts) {
    const Shape& s = tape.value(p).shape();
    require_shape(s.size() == first.size(), "concat rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      require_shape(d == axis || s[d] == first[d],
                    "concat shape mismatch " + shape_string(s) + " vs " + shape_string(first));
    }
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  Tensor<T> y(out_shape);
  const std::size_t row = out_shape[axis] * inner;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& v = tape.value(parts[k]);
    const std::size_t len = extents[k] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.data() + o * len, len, y.data() + o * row + offset);
    }
    offset += len;
  }
  return tape.record("concat", std::move(y), parts, [=](Tape<T>& t, const Tensor<T>& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const std::size_t len = extents[k] * inner;
      if (t.requires_grad(parts[k])) {
        Tensor<T> part(t.value(parts[k]).shape());
        for (std::size_t o = 0; o < outer; ++o) {
          std::copy_n(g.data() + o * row + off, len, part.data() + o * len);
        }
        t.accumulate(parts[k], part);
      }
      off += len;
    }
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  require_shape(av.shape() == bv.shape(),
                "add: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  Tensor<T> y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return tape.record("add", std::move(y), {a, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename T>
Var add_constant(Tape<T>& tape, Var a, const Tensor<T>& c) {
  const Tensor<T>& av = tape.value(a);
  require_shape(av.shape() == c.shape(),
                "add_constant: " + shape_string(av.shape()) + " vs " + shape_string(c.shape()));
  Tensor<T> y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += c[i];
  return tape.record("add_constant", std::move(y), {a},
                     [=](Tape<T>& t, const Tensor<T>& g) { t.accumulate(a, g); });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, double factor) {
  Tensor<T> y = tape.value(a);
  const T f = static_cast<T>(factor);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= f;
  return tape.record("scale", std::move(y), {a}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> d = g;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= f;
    t.accumulate(a, d);
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
  const Tensor<T>& av = tape.value(a);
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i];
  return tape.record("sum", Tensor<T>::scalar(static_cast<T>(acc)), {a},
                     [=](Tape<T>& t, const Tensor<T>& g) {
                       t.accumulate(a, Tensor<T>(t.value(a).shape(), g.item()));
                     });
}

template <typename T>
Var mse(Tape<T>& tape, Var a, const Tensor<T>& target) {
  const Tensor<T>& av = tape.value(a);
  require_shape(av.shape() == target.shape(),
                "mse: " + shape_string(av.shape()) + " vs " + shape_string(target.shape()));
  if (av.empty()) throw ContractError("mse of an empty tensor");
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(target[i]);
    acc += d * d;
  }
  const double n = static_cast<double>(av.size());
  return tape.record("mse", Tensor<T>::scalar(static_cast<T>(acc / n)), {a},
                     [=](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& v = t.value(a);
                       Tensor<T> d(v.shape());
                       const double k = 2.0 * static_cast<double>(g.item()) / n;
                       for (std::size_t i = 0; i < v.size(); ++i) {
                         d[i] = static_cast<T>(k * (static_cast<double>(v[i]) - static_cast<double>(target[i])));
                       }
                       t.accumulate(a, d);
                     });
}

template <typename T>
Var neg_log2_sum(Tape<T>& tape, Var a) {
  const Tensor<T>& av = tape.value(a);
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (!(av[i] > T(0))) throw ValueError("neg_log2_sum of a non-positive value");
    acc -= std::log2(static_cast<double>(av[i]));
  }
  return tape.record("neg_log2_sum", Tensor<T>::scalar(static_cast<T>(acc)), {a},
                     [=](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& v = t.value(a);
                       Tensor<T> d(v.shape());
                       const double k = -static_cast<double>(g.item()) / std::numbers::ln2;
                       for (std::size_t i = 0; i < v.size(); ++i) {
                         d[i] = static_cast<T>(k / static_cast<double>(v[i]));
                       }
                       t.accumulate(a, d);
                     });
}

#define NIC_INSTANTIATE_OPS(T)                                                   \
  template Var conv2d(Tape<T>&, Var, Var, Var, int);                             \
  template Var conv2d_transpose(Tape<T>&, Var, Var, Var, int);                   \
  template Var gdn(Tape<T>&, Var, Var, Var);                                     \
  template Var igdn(Tape<T>&, Var, Var, Var);                                    \
  template Var channel_affine(Tape<T>&, Var, Var, Var);                          \
  template Var concat(Tape<T>&, const std::vector<Var>&, std::size_t);           \
  template Var add(Tape<T>&, Var, Var);                                          \
  template Var add_constant(Tape<T>&, Var, const Tensor<T>&);                    \
  template Var scale(Tape<T>&, Var, double);                                     \
  template Var sum(Tape<T>&, Var);                                               \
  template Var mse(Tape<T>&, Var, const Tensor<T>&);                             \
  template Var neg_log2_sum(Tape<T>&, Var);

NIC_INSTANTIATE_OPS(float)
NIC_INSTANTIATE_OPS(double)

}  // namespace nic::ad
