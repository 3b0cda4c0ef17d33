#pragma once

// Rate-distortion training, Adam, and the adaptation strategies.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nic/autodiff.hpp"
#include "nic/codec_model.hpp"
#include "nic/image.hpp"
#include "nic/random.hpp"

namespace nic {

inline constexpr std::array<double, 4> kLambdas{0.002, 0.008, 0.016, 0.032};

// Index into kLambdas, or nullopt for an off-grid value.
std::optional<int> lambda_index_of(double lambda);

enum class Strategy { scratch, naive_ft, selective_ft, cawf, joint };

Strategy parse_strategy(const std::string& text);
std::string to_string(Strategy s);

struct TrainConfig {
  double lambda = 0.008;
  int steps = 2000;
  int batch = 8;
  int patch = 48;
  double lr = 1e-4;
  std::uint64_t seed = 1;
  Strategy strategy = Strategy::scratch;
  int log_interval = 10;

  void validate() const;
};

// Trainable flag per parameter slot, in walk_params order.
struct FreezeMask {
  std::vector<bool> trainable;

  bool operator()(std::size_t slot) const { return trainable.at(slot); }
};

// scratch, naive_ft, joint: everything. selective_ft: GDN/IGDN, entropy
// models and channel affine. cawf: custom-tagged slots only.
bool is_trainable(Strategy s, const ParamInfo& info);
FreezeMask make_mask(const CodecModel<float>& model, Strategy s);

struct ParamTally {
  std::size_t trainable = 0;
  std::size_t total = 0;
  double fraction() const { return total ? static_cast<double>(trainable) / static_cast<double>(total) : 0.0; }
};

ParamTally tally(const CodecModel<float>& model, const FreezeMask& mask);

template <typename T>
struct RdTerms {
  ad::Var J, R, D;
};

// Optional decoder replacement (test doubles): latent of batch item i -> x̂.
template <typename T>
using DecoderOverride = std::function<ad::Var(ad::Tape<T>&, ad::Var latent, std::size_t i)>;

// R: mean over the batch of rate_bits(z + u) / pixels, D: mean MSE in 0..255
// units, J = R + lambda D. Noise is drawn from rng in batch order.
template <typename T>
RdTerms<T> rd_loss(ad::Tape<T>& tape, const NetParams<ad::Var>& params, const CodecConfig& config,
                   std::span<const Tensor<T>> batch, double lambda, Rng& rng, int use_version,
                   const DecoderOverride<T>& decoder = {});

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  long step = 0;
};

// One bias-corrected Adam update of params[i] with grads[i]. State is created
// lazily. Throws NumericError on a non-finite gradient.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state,
               double lr, const AdamHyper& hyper = {});

struct LossRecord {
  int step = 0;
  double J = 0, R = 0, D = 0;
};

struct TrainResult {
  CodecModel<float> model;
  std::vector<LossRecord> trace;
};

// Runs cfg.steps optimizer steps on the trainable slots of `model`
// (use_version routing), then freezes the PMF tables and refreshes the hash.
// `sample` draws one batch per step.
using BatchSampler = std::function<std::vector<Tensor<float>>(Rng&)>;
TrainResult optimize(CodecModel<float> model, const FreezeMask& mask, const BatchSampler& sample,
                     const TrainConfig& cfg, int use_version);

TrainResult train(std::span<const Image> images, const TrainConfig& cfg, const CodecConfig& codec);

// 50/50 source/target batches.
TrainResult train_joint(std::span<const Image> source, std::span<const Image> target, const TrainConfig& cfg,
                        const CodecConfig& codec);

// naive_ft, selective_ft or cawf starting from a version-1 source model.
TrainResult adapt(const CodecModel<float>& source, std::span<const Image> target, const TrainConfig& cfg);

void write_trace_csv(const std::vector<LossRecord>& trace, const std::string& path);

}  // namespace nic
