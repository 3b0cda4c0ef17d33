#pragma once

// Learned factorized density over latent channels and the integer PMF tables
// derived from it for range coding.
//
// Per channel the CDF is a small monotone network with widths w_0..w_K
// (w_0 = w_K = 1):
//   h <- softplus(H_k) h + b_k                 for k = 0..K-1
//   h <- h + tanh(a_k) * tanh(h)               for k < K-1
//   cdf(x) = sigmoid(h)
// softplus keeps the matrices positive and |tanh(a_k)| < 1 keeps the gated
// residual increasing, so the CDF is monotone by construction.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nic/autodiff.hpp"
#include "nic/random.hpp"
#include "nic/tensor.hpp"

namespace nic {

inline const std::vector<std::size_t> kDefaultDensityWidths{1, 3, 3, 3, 1};
inline constexpr double kLikelihoodFloor = 1e-9;
inline constexpr double kDefaultTailMass = 1.0 / 256.0;

// P is Tensor<T> for stored parameters or ad::Var when bound to a tape.
//   matrices[k]  [C, w_{k+1}, w_k]
//   biases[k]    [C, w_{k+1}]
//   factors[k]   [C, w_{k+1}]   (k < K-1)
template <typename P>
struct DensityParams {
  std::vector<P> matrices;
  std::vector<P> biases;
  std::vector<P> factors;
};

template <typename T>
using FactorizedDensity = DensityParams<Tensor<T>>;

template <typename T>
FactorizedDensity<T> make_density(std::size_t channels, Rng& rng,
                                  const std::vector<std::size_t>& widths = kDefaultDensityWidths,
                                  double init_scale = 10.0);

template <typename T>
std::size_t density_channels(const FactorizedDensity<T>& d);

template <typename T>
std::vector<std::size_t> density_widths(const FactorizedDensity<T>& d);

template <typename T>
std::size_t density_parameter_count(const FactorizedDensity<T>& d);

// Pre-sigmoid CDF value of one channel, evaluated in 64-bit.
template <typename T>
double density_logit(const FactorizedDensity<T>& d, std::size_t channel, double x);

template <typename T>
double density_cdf(const FactorizedDensity<T>& d, std::size_t channel, double x);

// Probability mass of the unit interval around v: cdf(v + 1/2) - cdf(v - 1/2).
template <typename T>
double density_mass(const FactorizedDensity<T>& d, std::size_t channel, double v);

// Differentiable likelihood of z [C, h, w] (channel count must match the
// density); values are floored at kLikelihoodFloor.
template <typename T>
ad::Var likelihood(ad::Tape<T>& tape, ad::Var z, const DensityParams<ad::Var>& d);

// Sum of -log2(likelihood) over all elements.
template <typename T>
ad::Var rate_bits(ad::Tape<T>& tape, ad::Var z, const DensityParams<ad::Var>& d);

template <typename T>
DensityParams<ad::Var> bind_density(ad::Tape<T>& tape, const FactorizedDensity<T>& d, bool trainable);

// Non-differentiable conveniences.
template <typename T>
Tensor<T> likelihood(const Tensor<T>& z, const FactorizedDensity<T>& d);

template <typename T>
double rate_bits(const Tensor<T>& z, const FactorizedDensity<T>& d);

// Frozen integer PMF of one channel over the support [q_min, q_max].
struct ChannelPmf {
  std::int32_t q_min = 0;
  std::int32_t q_max = 0;
  std::vector<std::uint32_t> freq;  // q_max - q_min + 1 entries, each >= 1
  std::vector<std::uint32_t> cum;   // freq.size() + 1 entries, cum.back() == kTotal

  static constexpr unsigned kPrecisionBits = 16;
  static constexpr std::uint32_t kTotal = 1u << kPrecisionBits;

  ChannelPmf() = default;
  // Validates the frequencies and builds the cumulative table.
  ChannelPmf(std::int32_t lo, std::int32_t hi, std::vector<std::uint32_t> frequencies);

  std::size_t support() const noexcept { return freq.size(); }
  std::int32_t clamp(std::int64_t q) const noexcept;
  bool contains(std::int64_t q) const noexcept { return q >= q_min && q <= q_max; }
  // Shannon entropy of the integer PMF in bits.
  double entropy_bits() const;
  // -log2 of the coded probability of symbol q.
  double information_bits(std::int32_t q) const;

  friend bool operator==(const ChannelPmf& a, const ChannelPmf& b) {
    return a.q_min == b.q_min && a.q_max == b.q_max && a.freq == b.freq;
  }
};

struct PmfTable {
  std::vector<ChannelPmf> channels;

  bool empty() const noexcept { return channels.empty(); }
  std::size_t size() const noexcept { return channels.size(); }
  friend bool operator==(const PmfTable&, const PmfTable&) = default;
};

inline constexpr std::int32_t kMaxSupportMagnitude = 4095;

// Per channel: the smallest integer interval (grown greedily from the mode)
// holding at least 1 - tail_mass, widened by one guard symbol on each side;
// the tails are folded into the edge symbols. Masses are integerized to a
// total of 2^16 with every symbol >= 1 by largest-remainder rounding.
// Throws NumericError when a support would leave [-4095, 4095].
template <typename T>
PmfTable freeze_tables(const FactorizedDensity<T>& d, double tail_mass = kDefaultTailMass);

}  // namespace nic
