#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "nic/entropy_model.hpp"
#include "nic/error.hpp"
#include "nic/kernels.hpp"
#include "nic/training.hpp"

using namespace nic;

namespace {

CodecConfig tiny() {
  CodecConfig c;
  c.shared_filters = 8;
  c.custom_filters = 2;
  return c;
}

std::vector<Image> images(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Image> out;
  for (std::size_t k = 0; k < n; ++k) {
    Image im(48, 48);
    const double fx = rng.uniform(0.05, 0.3), fy = rng.uniform(0.05, 0.3);
    for (std::size_t y = 0; y < 48; ++y)
      for (std::size_t x = 0; x < 48; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          im.at(y, x, c) = static_cast<std::uint8_t>(127.5 + 100 * std::sin(fx * double(x) + fy * double(y) + double(c)));
    out.push_back(std::move(im));
  }
  return out;
}

TrainConfig short_run(Strategy s, int steps = 6) {
  TrainConfig cfg;
  cfg.steps = steps;
  cfg.batch = 2;
  cfg.patch = 16;
  cfg.lr = 1e-3;
  cfg.log_interval = 2;
  cfg.strategy = s;
  return cfg;
}

std::vector<Tensor<double>> batch_of(std::size_t n, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor<double>> b;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<double> x({3, size, size});
    for (auto& v : x.values()) v = rng.uniform(0, 255);
    b.push_back(std::move(x));
  }
  return b;
}

std::map<std::string, Tensor<float>> by_name(const CodecModel<float>& m) {
  std::map<std::string, Tensor<float>> out;
  walk_params(
      [&](const ParamInfo& info, const Tensor<float>& t) {
        if (present(t)) out.emplace(info.name, t);
      },
      m.params);
  return out;
}

// Serial reference forward pass of the plain version-1 network.
double j_oracle(const CodecModel<double>& m, const std::vector<Tensor<double>>& batch, double lambda, Rng& rng) {
  namespace ref = kernels::reference;
  const auto& p = m.params;
  const auto& d = p.entropy[0];
  double R = 0, D = 0;
  for (const auto& x : batch) {
    Tensor<double> h = x;
    for (auto& v : h.values()) v /= 255.0;
    for (std::size_t i = 0; i < 4; ++i) {
      h = ref::conv2d(h, p.encoder_convs[i].weight.ss, p.encoder_convs[i].bias.s, 2);
      if (i < 3) h = ref::gdn(h, p.encoder_gdn[i].beta.s, p.encoder_gdn[i].gamma.ss, false);
    }
    const std::size_t plane = h.dim(1) * h.dim(2);
    double bits = 0;
    for (std::size_t c = 0; c < h.dim(0); ++c)
      for (std::size_t k = 0; k < plane; ++k) {
        double& v = h[c * plane + k];
        v += rng.uniform() - 0.5;
        bits -= std::log2(std::max(density_mass(d, c, v), kLikelihoodFloor));
      }
    R += bits / double(x.dim(1) * x.dim(2));
    for (std::size_t i = 0; i < 4; ++i) {
      h = ref::conv2d_transpose(h, p.decoder_convs[i].weight.ss, p.decoder_convs[i].bias.s, 2);
      if (i < 3) h = ref::gdn(h, p.decoder_igdn[i].beta.s, p.decoder_igdn[i].gamma.ss, true);
    }
    double se = 0;
    for (std::size_t k = 0; k < x.size(); ++k) se += std::pow(255.0 * h[k] - x[k], 2);
    D += se / double(x.size());
  }
  const double n = double(batch.size());
  return R / n + lambda * D / n;
}

}  // namespace

TEST(Lambda, Grid) {
  EXPECT_EQ(lambda_index_of(0.008), 1);
  EXPECT_EQ(lambda_index_of(0.032), 3);
  EXPECT_FALSE(lambda_index_of(0.01).has_value());
}

TEST(RdLoss, MatchesReferenceOracle) {
  const auto m = make_model<double>(tiny(), 3);
  const auto batch = batch_of(2, 32, 4);
  for (double lambda : {0.0, 0.008, 0.032}) {
    ad::Tape<double> tape(false);
    Rng a(9), b(9);
    const auto terms = rd_loss<double>(tape, bind_constants(tape, m.params), m.config, batch, lambda, a, 1);
    const double J = tape.value(terms.J).item();
    EXPECT_NEAR(J, j_oracle(m, batch, lambda, b), 1e-9 * std::abs(J));
    const double R = tape.value(terms.R).item(), D = tape.value(terms.D).item();
    EXPECT_NEAR(J, R + lambda * D, 1e-12 * std::abs(J));
    if (lambda == 0.0) EXPECT_EQ(J, R);
  }
}

TEST(RdLoss, PerfectDecoderHasZeroDistortion) {
  const auto m = make_model<double>(tiny(), 5);
  const auto batch = batch_of(3, 16, 6);
  ad::Tape<double> tape;
  Rng rng(7);
  DecoderOverride<double> echo = [&](ad::Tape<double>& t, ad::Var, std::size_t i) { return t.constant(batch[i]); };
  const auto terms = rd_loss<double>(tape, bind_constants(tape, m.params), m.config, batch, 0.5, rng, 1, echo);
  EXPECT_EQ(tape.value(terms.D).item(), 0.0);
  EXPECT_EQ(tape.value(terms.J).item(), tape.value(terms.R).item());
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor<double> p({4}, std::vector<double>{1, -2, 3, 0.5});
  const auto before = p;
  AdamState<double> st;
  std::vector<Tensor<double>*> ps{&p};
  std::vector<Tensor<double>> gs{Tensor<double>({4})};
  for (int i = 0; i < 5; ++i) adam_step<double>(ps, gs, st, 0.1);
  EXPECT_TRUE(bitwise_equal(p, before));
}

TEST(Adam, ScalarClosedForm) {
  // hand-rolled bias-corrected update with a time-varying gradient
  Tensor<double> p({1}, std::vector<double>{2.0});
  AdamState<double> st;
  std::vector<Tensor<double>*> ps{&p};
  double x = 2.0, m = 0, v = 0;
  for (int t = 1; t <= 20; ++t) {
    const double g = 2 * x - 1;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    std::vector<Tensor<double>> gs{Tensor<double>({1}, std::vector<double>{2 * p[0] - 1})};
    adam_step<double>(ps, gs, st, 0.05);
    EXPECT_NEAR(p[0], x, 1e-14);
  }
  // first step moves by exactly lr
  Tensor<double> q({1}, std::vector<double>{0.0});
  AdamState<double> s2;
  std::vector<Tensor<double>*> qs{&q};
  adam_step<double>(qs, std::vector<Tensor<double>>{Tensor<double>({1}, std::vector<double>{3.0})}, s2, 0.01);
  EXPECT_NEAR(q[0], -0.01, 1e-9);
}

TEST(Adam, NonFiniteGradientRejected) {
  Tensor<float> p({2});
  AdamState<float> st;
  std::vector<Tensor<float>*> ps{&p};
  std::vector<Tensor<float>> gs{Tensor<float>({2}, std::vector<float>{1.0f, NAN})};
  EXPECT_THROW(adam_step<float>(ps, gs, st, 0.1), NumericError);
}

TEST(Masks, SelectiveFractionOfFullModel) {
  const auto m = insert_affine(make_model<float>(CodecConfig{}, 1));
  const auto t = tally(m, make_mask(m, Strategy::selective_ft));
  EXPECT_EQ(t.total, param_count(m));
  EXPECT_GE(t.fraction(), 0.04);
  EXPECT_LE(t.fraction(), 0.06);
}

TEST(Masks, CawfMaskIsExactlyCustomSlots) {
  const auto g = grow_cawf(make_model<float>(CodecConfig{}, 1), 2);
  const auto mask = make_mask(g, Strategy::cawf);
  std::size_t slot = 0, custom = 0;
  walk_params(
      [&](const ParamInfo& info, const Tensor<float>& t) {
        EXPECT_EQ(mask(slot), info.tag == Tag::custom) << info.name;
        if (info.tag == Tag::custom) custom += t.size();
        ++slot;
      },
      g.params);
  EXPECT_EQ(tally(g, mask).trainable, custom);
  // includes the second entropy model on top of the conv/GDN blocks
  EXPECT_EQ(custom, 362032u + 80u * 43u);
}

TEST(Masks, FrozenSlotsUntouchedByTraining) {
  const auto source = train(images(4, 1), short_run(Strategy::scratch), tiny()).model;
  const auto before = by_name(source);
  const auto target = images(4, 2);
  for (Strategy s : {Strategy::naive_ft, Strategy::selective_ft, Strategy::cawf}) {
    const auto adapted = adapt(source, target, short_run(s)).model;
    std::size_t changed = 0;
    walk_params(
        [&](const ParamInfo& info, const Tensor<float>& t) {
          if (!present(t)) return;
          const auto it = before.find(info.name);
          const bool moved = it == before.end() || !bitwise_equal(it->second, t);
          if (!is_trainable(s, info)) {
            EXPECT_FALSE(moved) << to_string(s) << " " << info.name;
          } else if (moved) {
            ++changed;
          }
        },
        adapted.params);
    EXPECT_GT(changed, 0u) << to_string(s);
    if (s == Strategy::cawf) EXPECT_TRUE(bitwise_equal(slice_v1(adapted), source));
  }
}

TEST(Training, DeterministicForSeed) {
  const auto im = images(3, 3);
  const auto a = train(im, short_run(Strategy::scratch), tiny());
  const auto b = train(im, short_run(Strategy::scratch), tiny());
  EXPECT_TRUE(bitwise_equal(a.model, b.model));
  EXPECT_EQ(a.model.model_hash, b.model.model_hash);
  auto other = short_run(Strategy::scratch);
  other.seed = 2;
  EXPECT_FALSE(bitwise_equal(train(im, other, tiny()).model, a.model));
}

TEST(Training, TraceShapeAndAdditivity) {
  auto cfg = short_run(Strategy::scratch, 7);
  cfg.log_interval = 3;
  const auto r = train(images(2, 4), cfg, tiny());
  ASSERT_EQ(r.trace.size(), 2u);
  EXPECT_EQ(r.trace[0].step, 3);
  EXPECT_EQ(r.trace[1].step, 6);
  // float32 tape
  for (const auto& rec : r.trace) EXPECT_NEAR(rec.J, rec.R + cfg.lambda * rec.D, 1e-6 * rec.J);
  EXPECT_EQ(r.model.tables.size(), 1u);
  EXPECT_EQ(r.model.model_hash, compute_model_hash(r.model));
}

TEST(Training, ConfigValidation) {
  auto cfg = short_run(Strategy::scratch);
  cfg.patch = 20;
  EXPECT_THROW(cfg.validate(), ContractError);
  cfg = short_run(Strategy::scratch);
  cfg.lambda = 0;
  EXPECT_THROW(cfg.validate(), ContractError);
  EXPECT_THROW(parse_strategy("bogus"), Error);
  EXPECT_EQ(parse_strategy(to_string(Strategy::cawf)), Strategy::cawf);
}
