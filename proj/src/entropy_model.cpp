#include "nic/entropy_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

namespace nic {
namespace {

template <typename T>
T softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Per-channel constants of the CDF network: softplus(H_k), tanh(a_k), b_k.
template <typename T>
struct ChannelNet {
  std::vector<std::size_t> widths;
  std::vector<std::vector<T>> weights;  // [k] -> out x in, row-major
  std::vector<std::vector<T>> biases;
  std::vector<std::vector<T>> gates;
  std::size_t max_width = 1;

  std::size_t layers() const { return widths.size() - 1; }
};

template <typename T, typename Source>
ChannelNet<T> channel_net(const std::vector<std::size_t>& widths, const Source& matrices,
                          const Source& biases, const Source& factors, std::size_t c) {
  ChannelNet<T> net;
  net.widths = widths;
  net.max_width = *std::max_element(widths.begin(), widths.end());
  const std::size_t layers = widths.size() - 1;
  for (std::size_t k = 0; k < layers; ++k) {
    const std::size_t rows = widths[k + 1], cols = widths[k];
    std::vector<T> w(rows * cols), b(rows), a;
    for (std::size_t i = 0; i < rows * cols; ++i) {
      w[i] = softplus(static_cast<T>(matrices[k][c * rows * cols + i]));
    }
    for (std::size_t i = 0; i < rows; ++i) b[i] = static_cast<T>(biases[k][c * rows + i]);
    if (k + 1 < layers) {
      a.resize(rows);
      for (std::size_t i = 0; i < rows; ++i) a[i] = std::tanh(static_cast<T>(factors[k][c * rows + i]));
    }
    net.weights.push_back(std::move(w));
    net.biases.push_back(std::move(b));
    net.gates.push_back(std::move(a));
  }
  return net;
}

// Forward pass of one scalar. When pre is non-null it receives the
// pre-activations of every layer (layers x max_width) and inputs the layer
// inputs, for the backward pass.
template <typename T>
T net_logit(const ChannelNet<T>& net, T x, T* pre, T* inputs) {
  T h[32], next[32];
  h[0] = x;
  const std::size_t layers = net.layers();
  for (std::size_t k = 0; k < layers; ++k) {
    const std::size_t rows = net.widths[k + 1], cols = net.widths[k];
    if (inputs) std::copy_n(h, cols, inputs + k * net.max_width);
    for (std::size_t o = 0; o < rows; ++o) {
      T acc = net.biases[k][o];
      for (std::size_t i = 0; i < cols; ++i) acc += net.weights[k][o * cols + i] * h[i];
      if (pre) pre[k * net.max_width + o] = acc;
      next[o] = (k + 1 < layers) ? acc + net.gates[k][o] * std::tanh(acc) : acc;
    }
    std::copy_n(next, rows, h);
  }
  return h[0];
}

template <typename T>
struct ChannelGrads {
  std::vector<std::vector<double>> dweights, dbiases, dgates;  // w.r.t. softplus(H), b, tanh(a)
};

// Backpropagates upstream gradient g of the logit through the network using
// the saved activations; returns d logit / d x scaled by g.
template <typename T>
T net_backward(const ChannelNet<T>& net, const T* pre, const T* inputs, T g, ChannelGrads<T>& acc) {
  T gh[32], gin[32];
  gh[0] = g;
  const std::size_t layers = net.layers();
  for (std::size_t k = layers; k-- > 0;) {
    const std::size_t rows = net.widths[k + 1], cols = net.widths[k];
    T dpre[32];
    for (std::size_t o = 0; o < rows; ++o) {
      const T p = pre[k * net.max_width + o];
      if (k + 1 < layers) {
        const T t = std::tanh(p);
        acc.dgates[k][o] += static_cast<double>(gh[o] * t);
        dpre[o] = gh[o] * (T(1) + net.gates[k][o] * (T(1) - t * t));
      } else {
        dpre[o] = gh[o];
      }
      acc.dbiases[k][o] += static_cast<double>(dpre[o]);
    }
    const T* in = inputs + k * net.max_width;
    for (std::size_t i = 0; i < cols; ++i) {
      T s = 0;
      for (std::size_t o = 0; o < rows; ++o) {
        acc.dweights[k][o * cols + i] += static_cast<double>(dpre[o] * in[i]);
        s += net.weights[k][o * cols + i] * dpre[o];
      }
      gin[i] = s;
    }
    std::copy_n(gin, cols, gh);
  }
  return gh[0];
}

// Mass of [v - 1/2, v + 1/2] from the two logits. Uses the reflected form
// |sigmoid(s*u) - sigmoid(s*l)| with s = -sign(u + l) so that differences are
// taken in the tail where sigmoid is not saturated.
template <typename T>
T mass_from_logits(T lower, T upper) {
  const T s = (lower + upper > T(0)) ? T(-1) : T(1);
  return std::abs(sigmoid(s * upper) - sigmoid(s * lower));
}

std::vector<std::size_t> widths_from(const std::vector<Shape>& matrix_shapes) {
  std::vector<std::size_t> widths;
  widths.push_back(matrix_shapes.front()[2]);
  for (const Shape& s : matrix_shapes) widths.push_back(s[1]);
  return widths;
}

void check_widths(const std::vector<std::size_t>& widths) {
  require_shape(widths.size() >= 2 && widths.front() == 1 && widths.back() == 1,
                "density widths must start and end with 1");
  for (std::size_t w : widths) require_shape(w >= 1 && w <= 32, "density width out of range [1, 32]");
}

}  // namespace

template <typename T>
FactorizedDensity<T> make_density(std::size_t channels, Rng& rng, const std::vector<std::size_t>& widths,
                                  double init_scale) {
  check_widths(widths);
  const std::size_t layers = widths.size() - 1;
  const double scale = std::pow(init_scale, 1.0 / static_cast<double>(layers));
  FactorizedDensity<T> d;
  for (std::size_t k = 0; k < layers; ++k) {
    const std::size_t rows = widths[k + 1], cols = widths[k];
    // softplus(H) = 1 / (scale * rows) makes the untrained CDF roughly a
    // logistic of width init_scale.
    const double init = std::log(std::expm1(1.0 / scale / static_cast<double>(rows)));
    d.matrices.emplace_back(Shape{channels, rows, cols}, static_cast<T>(init));
    Tensor<T> bias({channels, rows});
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = static_cast<T>(rng.uniform(-0.5, 0.5));
    d.biases.push_back(std::move(bias));
    if (k + 1 < layers) d.factors.emplace_back(Shape{channels, rows});
  }
  return d;
}

template <typename T>
std::size_t density_channels(const FactorizedDensity<T>& d) {
  return d.matrices.empty() ? 0 : d.matrices.front().dim(0);
}

template <typename T>
std::vector<std::size_t> density_widths(const FactorizedDensity<T>& d) {
  std::vector<Shape> shapes;
  for (const auto& m : d.matrices) shapes.push_back(m.shape());
  return shapes.empty() ? std::vector<std::size_t>{} : widths_from(shapes);
}

template <typename T>
std::size_t density_parameter_count(const FactorizedDensity<T>& d) {
  std::size_t n = 0;
  for (const auto& t : d.matrices) n += t.size();
  for (const auto& t : d.biases) n += t.size();
  for (const auto& t : d.factors) n += t.size();
  return n;
}

template <typename T>
double density_logit(const FactorizedDensity<T>& d, std::size_t channel, double x) {
  const auto net = channel_net<double>(density_widths(d), d.matrices, d.biases, d.factors, channel);
  return net_logit<double>(net, x, nullptr, nullptr);
}

template <typename T>
double density_cdf(const FactorizedDensity<T>& d, std::size_t channel, double x) {
  return sigmoid(density_logit(d, channel, x));
}

template <typename T>
double density_mass(const FactorizedDensity<T>& d, std::size_t channel, double v) {
  const auto net = channel_net<double>(density_widths(d), d.matrices, d.biases, d.factors, channel);
  return mass_from_logits(net_logit<double>(net, v - 0.5, nullptr, nullptr),
                          net_logit<double>(net, v + 0.5, nullptr, nullptr));
}

template <typename T>
DensityParams<ad::Var> bind_density(ad::Tape<T>& tape, const FactorizedDensity<T>& d, bool trainable) {
  DensityParams<ad::Var> out;
  auto bind = [&](const Tensor<T>& t) { return trainable ? tape.parameter(t) : tape.constant(t); };
  for (const auto& t : d.matrices) out.matrices.push_back(bind(t));
  for (const auto& t : d.biases) out.biases.push_back(bind(t));
  for (const auto& t : d.factors) out.factors.push_back(bind(t));
  return out;
}

template <typename T>
ad::Var likelihood(ad::Tape<T>& tape, ad::Var z, const DensityParams<ad::Var>& d) {
  const Tensor<T>& zv = tape.value(z);
  std::vector<Shape> shapes;
  std::vector<const Tensor<T>*> mats, biases, factors;
  for (ad::Var v : d.matrices) {
    shapes.push_back(tape.value(v).shape());
    mats.push_back(&tape.value(v));
  }
  for (ad::Var v : d.biases) biases.push_back(&tape.value(v));
  for (ad::Var v : d.factors) factors.push_back(&tape.value(v));
  require_shape(!shapes.empty(), "likelihood: empty density");
  const auto widths = widths_from(shapes);
  check_widths(widths);
  require_shape(zv.rank() == 3, "likelihood input must be [C,h,w], got " + shape_string(zv.shape()));
  const std::size_t channels = zv.dim(0);
  require_shape(shapes.front()[0] == channels, "likelihood: density has " + std::to_string(shapes.front()[0]) +
                                                   " channels, latent has " + std::to_string(channels));
  const std::size_t n = zv.size() / std::max<std::size_t>(channels, 1);

  auto deref = [](const std::vector<const Tensor<T>*>& v) {
    std::vector<std::span<const T>> out;
    for (auto* t : v) out.push_back(t->values());
    return out;
  };
  const auto mat_vals = deref(mats), bias_vals = deref(biases), fac_vals = deref(factors);

  Tensor<T> out(zv.shape());
  const auto cc = static_cast<std::int64_t>(channels);
#pragma omp parallel for schedule(static)
  for (std::int64_t ci = 0; ci < cc; ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    const auto net = channel_net<T>(widths, mat_vals, bias_vals, fac_vals, c);
    for (std::size_t p = 0; p < n; ++p) {
      const T v = zv[c * n + p];
      const T lower = net_logit<T>(net, v - T(0.5), nullptr, nullptr);
      const T upper = net_logit<T>(net, v + T(0.5), nullptr, nullptr);
      out[c * n + p] = std::max(mass_from_logits(lower, upper), static_cast<T>(kLikelihoodFloor));
    }
  }

  std::vector<ad::Var> inputs{z};
  inputs.insert(inputs.end(), d.matrices.begin(), d.matrices.end());
  inputs.insert(inputs.end(), d.biases.begin(), d.biases.end());
  inputs.insert(inputs.end(), d.factors.begin(), d.factors.end());

  return tape.record("likelihood", std::move(out), inputs, [=](ad::Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& zs = t.value(z);
    std::vector<std::span<const T>> mv, bv, fv;
    for (ad::Var v : d.matrices) mv.push_back(t.value(v).values());
    for (ad::Var v : d.biases) bv.push_back(t.value(v).values());
    for (ad::Var v : d.factors) fv.push_back(t.value(v).values());
    const std::size_t layers = widths.size() - 1;

    Tensor<T> dz(zs.shape());
    std::vector<Tensor<T>> dmats, dbiases, dfactors;
    for (ad::Var v : d.matrices) dmats.emplace_back(t.value(v).shape());
    for (ad::Var v : d.biases) dbiases.emplace_back(t.value(v).shape());
    for (ad::Var v : d.factors) dfactors.emplace_back(t.value(v).shape());
    const bool need_z = t.requires_grad(z);

#pragma omp parallel for schedule(static)
    for (std::int64_t ci = 0; ci < cc; ++ci) {
      const auto c = static_cast<std::size_t>(ci);
      const auto net = channel_net<T>(widths, mv, bv, fv, c);
      ChannelGrads<T> acc;
      for (std::size_t k = 0; k < layers; ++k) {
        acc.dweights.emplace_back(widths[k + 1] * widths[k], 0.0);
        acc.dbiases.emplace_back(widths[k + 1], 0.0);
        acc.dgates.emplace_back(widths[k + 1], 0.0);
      }
      std::vector<T> pre_l(layers * net.max_width), in_l(layers * net.max_width);
      std::vector<T> pre_u(layers * net.max_width), in_u(layers * net.max_width);
      for (std::size_t p = 0; p < n; ++p) {
        const T gp = g[c * n + p];
        const T v = zs[c * n + p];
        const T lower = net_logit<T>(net, v - T(0.5), pre_l.data(), in_l.data());
        const T upper = net_logit<T>(net, v + T(0.5), pre_u.data(), in_u.data());
        if (mass_from_logits(lower, upper) < static_cast<T>(kLikelihoodFloor)) {
          if (need_z) dz[c * n + p] = T(0);
          continue;
        }
        // d mass / d upper = sigma'(upper), d mass / d lower = -sigma'(lower)
        const T su = sigmoid(upper), sl = sigmoid(lower);
        const T gu = gp * su * (T(1) - su);
        const T gl = -gp * sl * (T(1) - sl);
        const T dxu = net_backward<T>(net, pre_u.data(), in_u.data(), gu, acc);
        const T dxl = net_backward<T>(net, pre_l.data(), in_l.data(), gl, acc);
        if (need_z) dz[c * n + p] = dxu + dxl;
      }
      for (std::size_t k = 0; k < layers; ++k) {
        const std::size_t rows = widths[k + 1], cols = widths[k];
        for (std::size_t i = 0; i < rows * cols; ++i) {
          // d softplus(H) / dH = sigmoid(H)
          const T h = mv[k][c * rows * cols + i];
          dmats[k][c * rows * cols + i] = static_cast<T>(acc.dweights[k][i]) * sigmoid(h);
        }
        for (std::size_t o = 0; o < rows; ++o) {
          dbiases[k][c * rows + o] = static_cast<T>(acc.dbiases[k][o]);
          if (k + 1 < layers) {
            const T ta = net.gates[k][o];
            dfactors[k][c * rows + o] = static_cast<T>(acc.dgates[k][o]) * (T(1) - ta * ta);
          }
        }
      }
    }
    t.accumulate(z, dz);
    for (std::size_t k = 0; k < d.matrices.size(); ++k) t.accumulate(d.matrices[k], dmats[k]);
    for (std::size_t k = 0; k < d.biases.size(); ++k) t.accumulate(d.biases[k], dbiases[k]);
    for (std::size_t k = 0; k < d.factors.size(); ++k) t.accumulate(d.factors[k], dfactors[k]);
  });
}

template <typename T>
ad::Var rate_bits(ad::Tape<T>& tape, ad::Var z, const DensityParams<ad::Var>& d) {
  return ad::neg_log2_sum(tape, likelihood(tape, z, d));
}

template <typename T>
Tensor<T> likelihood(const Tensor<T>& z, const FactorizedDensity<T>& d) {
  ad::Tape<T> tape(false);
  const auto vars = bind_density(tape, d, false);
  return tape.value(likelihood(tape, tape.constant(z), vars));
}

template <typename T>
double rate_bits(const Tensor<T>& z, const FactorizedDensity<T>& d) {
  ad::Tape<T> tape(false);
  const auto vars = bind_density(tape, d, false);
  return static_cast<double>(tape.value(rate_bits(tape, tape.constant(z), vars)).item());
}

ChannelPmf::ChannelPmf(std::int32_t lo, std::int32_t hi, std::vector<std::uint32_t> frequencies)
    : q_min(lo), q_max(hi), freq(std::move(frequencies)) {
  if (hi < lo || freq.size() != static_cast<std::size_t>(hi - lo) + 1) {
    throw ContractError("PMF support [" + std::to_string(lo) + ", " + std::to_string(hi) +
                        "] does not match " + std::to_string(freq.size()) + " frequencies");
  }
  cum.assign(freq.size() + 1, 0);
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < freq.size(); ++i) {
    if (freq[i] == 0) throw ContractError("PMF has a zero frequency inside its support");
    total += freq[i];
    if (total > kTotal) break;
    cum[i + 1] = static_cast<std::uint32_t>(total);
  }
  if (total != kTotal) {
    throw ContractError("PMF frequencies sum to " + std::to_string(total) + ", expected 65536");
  }
}

std::int32_t ChannelPmf::clamp(std::int64_t q) const noexcept {
  return static_cast<std::int32_t>(std::clamp<std::int64_t>(q, q_min, q_max));
}

double ChannelPmf::entropy_bits() const {
  double h = 0.0;
  for (std::uint32_t f : freq) {
    const double p = static_cast<double>(f) / kTotal;
    h -= p * std::log2(p);
  }
  return h;
}

double ChannelPmf::information_bits(std::int32_t q) const {
  return static_cast<double>(kPrecisionBits) -
         std::log2(static_cast<double>(freq.at(static_cast<std::size_t>(q - q_min))));
}

template <typename T>
PmfTable freeze_tables(const FactorizedDensity<T>& d, double tail_mass) {
  if (!(tail_mass > 0.0 && tail_mass < 1.0)) throw ContractError("tail_mass must lie in (0, 1)");
  const auto widths = density_widths(d);
  const std::size_t channels = density_channels(d);
  constexpr std::int32_t kLimit = kMaxSupportMagnitude;
  constexpr std::size_t kSpan = 2 * static_cast<std::size_t>(kLimit) + 1;

  PmfTable table;
  table.channels.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const auto net = channel_net<double>(widths, d.matrices, d.biases, d.factors, c);
    // logits[i] at the half-integer -kLimit - 1/2 + i
    std::vector<double> logits(kSpan + 1);
    for (std::size_t i = 0; i <= kSpan; ++i) {
      logits[i] = net_logit<double>(net, -kLimit - 0.5 + static_cast<double>(i), nullptr, nullptr);
    }
    std::vector<double> mass(kSpan);
    for (std::size_t i = 0; i < kSpan; ++i) mass[i] = mass_from_logits(logits[i], logits[i + 1]);
    const auto mode = static_cast<std::size_t>(std::max_element(mass.begin(), mass.end()) - mass.begin());

    std::size_t lo = mode, hi = mode;
    double covered = mass[mode];
    while (covered < 1.0 - tail_mass) {
      const bool can_left = lo > 0, can_right = hi + 1 < kSpan;
      if (!can_left && !can_right) {
        throw NumericError("entropy model channel " + std::to_string(c) +
                           " is degenerate: support exceeds [-4095, 4095]");
      }
      if (can_left && (!can_right || mass[lo - 1] > mass[hi + 1])) {
        covered += mass[--lo];
      } else {
        covered += mass[++hi];
      }
    }
    if (lo == 0 || hi + 1 == kSpan) {
      throw NumericError("entropy model channel " + std::to_string(c) +
                         " is degenerate: support guard exceeds [-4095, 4095]");
    }
    --lo;
    ++hi;

    const std::size_t n = hi - lo + 1;
    std::vector<double> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = mass[lo + i];
    // Fold the tails into the edge symbols: P(q <= lo) and P(q >= hi).
    p.front() = sigmoid(logits[lo + 1]);
    p.back() = sigmoid(-logits[hi]);
    const double total = std::accumulate(p.begin(), p.end(), 0.0);

    const std::uint32_t budget = ChannelPmf::kTotal - static_cast<std::uint32_t>(n);
    std::vector<std::uint32_t> freq(n);
    std::vector<std::pair<double, std::size_t>> remainders(n);
    std::uint32_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double share = p[i] / total * budget;
      const double whole = std::floor(share);
      freq[i] = 1 + static_cast<std::uint32_t>(whole);
      assigned += static_cast<std::uint32_t>(whole);
      remainders[i] = {share - whole, i};
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::uint32_t k = 0; assigned + k < budget; ++k) ++freq[remainders[k % n].second];
    table.channels[c] = ChannelPmf(static_cast<std::int32_t>(lo) - kLimit,
                                   static_cast<std::int32_t>(hi) - kLimit, std::move(freq));
  }
  return table;
}

#define NIC_INSTANTIATE_DENSITY(T)                                                                   \
  template FactorizedDensity<T> make_density<T>(std::size_t, Rng&, const std::vector<std::size_t>&,  \
                                                double);                                             \
  template std::size_t density_channels(const FactorizedDensity<T>&);                                \
  template std::vector<std::size_t> density_widths(const FactorizedDensity<T>&);                     \
  template std::size_t density_parameter_count(const FactorizedDensity<T>&);                         \
  template double density_logit(const FactorizedDensity<T>&, std::size_t, double);                   \
  template double density_cdf(const FactorizedDensity<T>&, std::size_t, double);                     \
  template double density_mass(const FactorizedDensity<T>&, std::size_t, double);                    \
  template DensityParams<ad::Var> bind_density(ad::Tape<T>&, const FactorizedDensity<T>&, bool);     \
  template ad::Var likelihood(ad::Tape<T>&, ad::Var, const DensityParams<ad::Var>&);                 \
  template ad::Var rate_bits(ad::Tape<T>&, ad::Var, const DensityParams<ad::Var>&);                  \
  template Tensor<T> likelihood(const Tensor<T>&, const FactorizedDensity<T>&);                      \
  template double rate_bits(const Tensor<T>&, const FactorizedDensity<T>&);                          \
  template PmfTable freeze_tables(const FactorizedDensity<T>&, double);

NIC_INSTANTIATE_DENSITY(float)
NIC_INSTANTIATE_DENSITY(double)

}  // namespace nic
