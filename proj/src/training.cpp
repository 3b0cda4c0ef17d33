#include "nic/training.hpp"

#include <cmath>
#include <fstream>

#include "nic/data.hpp"
#include "nic/entropy_model.hpp"
#include "nic/error.hpp"
#include "nic/pipeline.hpp"

namespace nic {

std::optional<int> lambda_index_of(double lambda) {
  for (std::size_t i = 0; i < kLambdas.size(); ++i) {
    if (std::abs(lambda - kLambdas[i]) <= 1e-12) return static_cast<int>(i);
  }
  return std::nullopt;
}

Strategy parse_strategy(const std::string& text) {
  if (text == "scratch") return Strategy::scratch;
  if (text == "naive" || text == "naive_ft") return Strategy::naive_ft;
  if (text == "selective" || text == "selective_ft") return Strategy::selective_ft;
  if (text == "cawf") return Strategy::cawf;
  if (text == "joint") return Strategy::joint;
  throw ContractError("unknown strategy '" + text + "'");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::scratch: return "scratch";
    case Strategy::naive_ft: return "naive_ft";
    case Strategy::selective_ft: return "selective_ft";
    case Strategy::cawf: return "cawf";
    case Strategy::joint: return "joint";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (!(lambda > 0) || !std::isfinite(lambda)) throw ContractError("lambda must be positive");
  if (steps < 0) throw ContractError("steps must be >= 0");
  if (batch < 1) throw ContractError("batch must be >= 1");
  if (patch < 16 || patch % 16 != 0) throw ContractError("patch must be a positive multiple of 16");
  if (!(lr > 0)) throw ContractError("lr must be positive");
  if (log_interval < 1) throw ContractError("log_interval must be >= 1");
}

bool is_trainable(Strategy s, const ParamInfo& info) {
  switch (s) {
    case Strategy::scratch:
    case Strategy::naive_ft:
    case Strategy::joint:
      return true;
    case Strategy::selective_ft:
      return info.role == Role::gdn_beta || info.role == Role::gdn_gamma || info.role == Role::density ||
             info.role == Role::affine_scale || info.role == Role::affine_shift;
    case Strategy::cawf:
      return info.tag == Tag::custom;
  }
  return false;
}

FreezeMask make_mask(const CodecModel<float>& model, Strategy s) {
  FreezeMask mask;
  walk_params([&](const ParamInfo& info, const Tensor<float>&) { mask.trainable.push_back(is_trainable(s, info)); },
              model.params);
  return mask;
}

ParamTally tally(const CodecModel<float>& model, const FreezeMask& mask) {
  ParamTally t;
  std::size_t slot = 0;
  walk_params(
      [&](const ParamInfo&, const Tensor<float>& p) {
        const std::size_t n = present(p) ? p.size() : 0;
        t.total += n;
        if (mask(slot++)) t.trainable += n;
      },
      model.params);
  return t;
}

template <typename T>
RdTerms<T> rd_loss(ad::Tape<T>& tape, const NetParams<ad::Var>& params, const CodecConfig& config,
                   std::span<const Tensor<T>> batch, double lambda, Rng& rng, int use_version,
                   const DecoderOverride<T>& decoder) {
  if (batch.empty()) throw ContractError("rd_loss: empty batch");
  const auto& density = params.entropy.at(static_cast<std::size_t>(use_version - 1));
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  ad::Var R, D;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tensor<T>& x = batch[i];
    const ad::Var z = encode_latent(tape, params, config, tape.constant(x), use_version);
    Tensor<T> noise(tape.value(z).shape());
    for (auto& u : noise.values()) u = static_cast<T>(rng.uniform() - 0.5);
    const ad::Var zt = ad::add_constant(tape, z, noise);
    const double pixels = static_cast<double>(x.dim(1) * x.dim(2));
    const ad::Var r = ad::scale(tape, rate_bits(tape, zt, density), inv_batch / pixels);
    const ad::Var xh = decoder ? decoder(tape, zt, i) : decode_latent(tape, params, config, zt, use_version);
    const ad::Var d = ad::scale(tape, ad::mse(tape, xh, x), inv_batch);
    R = i == 0 ? r : ad::add(tape, R, r);
    D = i == 0 ? d : ad::add(tape, D, d);
  }
  const ad::Var J = ad::add(tape, R, ad::scale(tape, D, lambda));
  return {J, R, D};
}

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state,
               double lr, const AdamHyper& hyper) {
  if (params.size() != grads.size()) throw ContractError("adam_step: params/grads count mismatch");
  if (state.m.empty()) {
    for (const Tensor<T>* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: state does not match params");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_shape(grads[i].shape() == params[i]->shape(), "adam_step: gradient shape mismatch");
    if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    Tensor<T>& m = state.m[i];
    Tensor<T>& v = state.v[i];
    const Tensor<T>& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * gk;
      const double vk = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      p[k] = static_cast<T>(p[k] - lr * (mk / c1) / (std::sqrt(vk / c2) + hyper.eps));
    }
  }
}

TrainResult optimize(CodecModel<float> model, const FreezeMask& mask, const BatchSampler& sample,
                     const TrainConfig& cfg, int use_version) {
  cfg.validate();
  check_version(model.version, use_version);
  Rng rng(cfg.seed);
  AdamState<float> adam;
  TrainResult result;
  LossRecord acc;
  int in_interval = 0;

  std::vector<Tensor<float>*> targets;
  std::vector<Role> roles;
  {
    std::size_t slot = 0;
    walk_params(
        [&](const ParamInfo& info, Tensor<float>& t) {
          if (mask(slot++) && present(t)) {
            targets.push_back(&t);
            roles.push_back(info.role);
          }
        },
        model.params);
  }

  for (int step = 0; step < cfg.steps; ++step) {
    const std::vector<Tensor<float>> batch = sample(rng);
    ad::Tape<float> tape;
    std::vector<ad::Var> leaves;
    std::size_t slot = 0;
    NetParams<ad::Var> vars = skeleton_like<ad::Var>(model.params);
    walk_params(
        [&](const ParamInfo&, const Tensor<float>& value, ad::Var& var) {
          const bool train = mask(slot++);
          if (!present(value)) return;
          var = train ? tape.parameter(value) : tape.constant(value);
          if (train) leaves.push_back(var);
        },
        model.params, vars);

    RdTerms<float> terms;
    try {
      terms = rd_loss<float>(tape, vars, model.config, batch, cfg.lambda, rng, use_version);
    } catch (const ValueError& e) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    const double J = tape.value(terms.J).item(), R = tape.value(terms.R).item(), D = tape.value(terms.D).item();
    if (!std::isfinite(J)) throw NumericError("training diverged at step " + std::to_string(step));
    const std::vector<Tensor<float>> grads = tape.gradients(terms.J, leaves);
    adam_step<float>(targets, grads, adam, cfg.lr);
    for (std::size_t i = 0; i < targets.size(); ++i) project_gdn(*targets[i], roles[i]);

    acc.J += J;
    acc.R += R;
    acc.D += D;
    if (++in_interval == cfg.log_interval) {
      const double n = in_interval;
      result.trace.push_back({step + 1, acc.J / n, acc.R / n, acc.D / n});
      acc = {};
      in_interval = 0;
    }
  }
  freeze_model_tables(model);
  refresh_hash(model);
  result.model = std::move(model);
  return result;
}

namespace {

BatchSampler patch_sampler(std::span<const Image> images, const TrainConfig& cfg) {
  return [images, cfg](Rng& rng) {
    return sample_patches(images, static_cast<std::size_t>(cfg.patch), static_cast<std::size_t>(cfg.batch), rng);
  };
}

CodecConfig with_lambda(CodecConfig codec, double lambda) {
  if (auto idx = lambda_index_of(lambda)) codec.lambda_index = *idx;
  return codec;
}

}  // namespace

TrainResult train(std::span<const Image> images, const TrainConfig& cfg, const CodecConfig& codec) {
  if (images.empty()) throw ContractError("train: empty dataset");
  auto model = make_model<float>(with_lambda(codec, cfg.lambda), cfg.seed);
  const FreezeMask mask = make_mask(model, Strategy::scratch);
  return optimize(std::move(model), mask, patch_sampler(images, cfg), cfg, 1);
}

TrainResult train_joint(std::span<const Image> source, std::span<const Image> target, const TrainConfig& cfg,
                        const CodecConfig& codec) {
  if (source.empty() || target.empty()) throw ContractError("train_joint: empty dataset");
  auto model = make_model<float>(with_lambda(codec, cfg.lambda), cfg.seed);
  const auto patch = static_cast<std::size_t>(cfg.patch);
  const auto half = static_cast<std::size_t>(cfg.batch) / 2;
  BatchSampler sample = [=](Rng& rng) {
    auto batch = sample_patches(source, patch, static_cast<std::size_t>(cfg.batch) - half, rng);
    auto more = sample_patches(target, patch, half, rng);
    batch.insert(batch.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
    return batch;
  };
  const FreezeMask mask = make_mask(model, Strategy::joint);
  return optimize(std::move(model), mask, sample, cfg, 1);
}

TrainResult adapt(const CodecModel<float>& source, std::span<const Image> target, const TrainConfig& cfg) {
  if (target.empty()) throw ContractError("adapt: empty target dataset");
  CodecModel<float> model;
  int use_version = 1;
  switch (cfg.strategy) {
    case Strategy::naive_ft:
      model = source;
      break;
    case Strategy::selective_ft:
      model = source.has_affine() ? source : insert_affine(source);
      break;
    case Strategy::cawf:
      model = grow_cawf(source, cfg.seed ^ 0x9e3779b97f4a7c15ULL);
      use_version = 2;
      break;
    default:
      throw ContractError("adapt: strategy must be naive_ft, selective_ft or cawf");
  }
  const FreezeMask mask = make_mask(model, cfg.strategy);
  return optimize(std::move(model), mask, patch_sampler(target, cfg), cfg, use_version);
}

void write_trace_csv(const std::vector<LossRecord>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path);
  out << "step,J,R,D\n";
  out.precision(9);
  for (const auto& r : trace) out << r.step << "," << r.J << "," << r.R << "," << r.D << "\n";
  if (!out) throw IoError("write failed: " + path);
}

template RdTerms<float> rd_loss<float>(ad::Tape<float>&, const NetParams<ad::Var>&, const CodecConfig&,
                                       std::span<const Tensor<float>>, double, Rng&, int,
                                       const DecoderOverride<float>&);
template RdTerms<double> rd_loss<double>(ad::Tape<double>&, const NetParams<ad::Var>&, const CodecConfig&,
                                         std::span<const Tensor<double>>, double, Rng&, int,
                                         const DecoderOverride<double>&);
template void adam_step<float>(std::span<Tensor<float>* const>, std::span<const Tensor<float>>,
                               AdamState<float>&, double, const AdamHyper&);
template void adam_step<double>(std::span<Tensor<double>* const>, std::span<const Tensor<double>>,
                                AdamState<double>&, double, const AdamHyper&);

}  // namespace nic
