// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 iff all pass.
//   acceptance [--work-dir DIR] [--only N]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>

#include "bd_oracle.hpp"
#include "grad_check.hpp"
#include "nic/data.hpp"
#include "nic/evaluation.hpp"
#include "nic/model_io.hpp"
#include "nic/pipeline.hpp"
#include "nic/training.hpp"

using namespace nic;
namespace fs = std::filesystem;
using nic::testing::gradient_error;
using nic::testing::random_tensor;

namespace {

// Tolerances and budgets.
constexpr std::size_t kEncoderBase = 324736, kDecoderBase = 324675;
constexpr std::size_t kEncoderGrown = 505760, kDecoderGrown = 505683;
constexpr double kSelectiveLo = 0.04, kSelectiveHi = 0.06;
constexpr int kFuzzGrids = 100000;
constexpr double kOverheadBytes = 4.0, kOverheadRel = 0.001;
constexpr int kGradInstances = 20;
constexpr double kGradTol = 1e-3;
constexpr int kRateImages = 20;
constexpr double kRateRel = 0.02;
constexpr double kBdIdentityTol = 1e-9, kBdDoubleTol = 0.1, kBdOracleTol = 0.1;
constexpr int kBdRandomCurves = 200;
constexpr double kCatastrophicPsnr = 15.0;

// Desk-scale experiment.
constexpr std::size_t kDomainImages = 32, kImageSize = 96, kEvalImages = 8;
constexpr std::uint64_t kSourceSeed = 11, kTargetSeed = 22;
constexpr int kSourceSteps = 2000, kAdaptSteps = 1000, kShortSteps = 40;
constexpr double kLambda = 0.008, kLr = 5e-4;

constexpr double kBudget[9] = {0, 1, 1, 60, 300, 120, 10, 1200, 300};

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Domain {
  std::vector<Image> train, eval;
};

Domain make_domain(SynthKind kind, std::uint64_t seed) {
  auto all = synth_images(kind, kDomainImages, kImageSize, seed);
  Domain d;
  d.train.assign(all.begin(), all.end() - kEvalImages);
  d.eval.assign(all.end() - kEvalImages, all.end());
  return d;
}

TrainConfig desk_config(Strategy s, int steps, std::uint64_t seed) {
  TrainConfig c;
  c.lambda = kLambda;
  c.steps = steps;
  c.batch = 8;
  c.patch = 48;
  c.lr = kLr;
  c.seed = seed;
  c.strategy = s;
  c.log_interval = 100;
  return c;
}

double g_train_seconds = 0.0, g_train_seconds_in_call = 0.0;

// Shared state of criteria 5, 7 and 8.
struct Desk {
  fs::path dir;
  Domain source, target;
  TrainResult base;
  double train_seconds = 0;
};

Desk& desk(const fs::path& work) {
  static std::optional<Desk> d;
  if (!d) {
    d.emplace();
    d->dir = work;
    d->source = make_domain(SynthKind::smooth, kSourceSeed);
    d->target = make_domain(SynthKind::texture, kTargetSeed);
    const auto t0 = Clock::now();
    CodecConfig cc;
    cc.lambda_index = *lambda_index_of(kLambda);
    d->base = train(d->source.train, desk_config(Strategy::scratch, kSourceSteps, 1), cc);
    d->train_seconds = since(t0);
    g_train_seconds = g_train_seconds_in_call = d->train_seconds;
    save_model(d->base.model, (work / "source_t1.nicm").string());
    write_trace_csv(d->base.trace, (work / "source_trace.csv").string());
    std::printf("      (source model: %d steps in %.1f s)\n", kSourceSteps, d->train_seconds);
    std::fflush(stdout);
  }
  return *d;
}

void c1_param_counts(Outcome& o, const fs::path&) {
  const auto base = make_model<float>(CodecConfig{}, 1);
  const auto grown = grow_cawf(base, 2);
  const std::size_t e1 = param_count(base, Part::encoder), d1 = param_count(base, Part::decoder);
  const std::size_t e2 = param_count(grown, Part::encoder), d2 = param_count(grown, Part::decoder);
  o.detail << "base enc " << e1 << " dec " << d1 << "; grown enc " << e2 << " dec " << d2 << " ";
  o.check(e1 == kEncoderBase && d1 == kDecoderBase, "base counts");
  o.check(e2 == kEncoderGrown && d2 == kDecoderGrown, "grown counts");
}

void c2_selective_fraction(Outcome& o, const fs::path&) {
  const auto m = insert_affine(make_model<float>(CodecConfig{}, 1));
  const auto t = tally(m, make_mask(m, Strategy::selective_ft));
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu / %zu = %.3f%% ", t.trainable, t.total, 100 * t.fraction());
  o.detail << buf;
  o.check(t.fraction() >= kSelectiveLo && t.fraction() <= kSelectiveHi, "fraction in [4%, 6%]");
}

ChannelPmf fuzz_pmf(Rng& rng) {
  const auto n = 1 + rng.below(48);
  const auto lo = static_cast<std::int32_t>(rng.below(201)) - 100;
  std::vector<double> w(n);
  double total = 0;
  const double sharp = rng.uniform(0.5, 6.0);
  for (auto& v : w) total += v = std::pow(rng.uniform(), sharp) + 1e-9;
  std::vector<std::uint32_t> freq(n, 1);
  std::uint64_t used = n;
  for (std::size_t i = 0; i < n; ++i) {
    const auto extra = static_cast<std::uint32_t>(w[i] / total * double(ChannelPmf::kTotal - n));
    freq[i] += extra;
    used += extra;
  }
  freq[rng.below(n)] += static_cast<std::uint32_t>(ChannelPmf::kTotal - used);
  return ChannelPmf(lo, lo + static_cast<std::int32_t>(n) - 1, std::move(freq));
}

void c3_lossless(Outcome& o, const fs::path&) {
  Rng rng(3);
  int failures = 0, over = 0;
  double worst = -1e300;
  std::size_t symbols = 0;
  for (int trial = 0; trial < kFuzzGrids; ++trial) {
    PmfTable tables;
    const auto channels = 1 + rng.below(4);
    for (std::size_t c = 0; c < channels; ++c) tables.channels.push_back(fuzz_pmf(rng));
    SymbolGrid g(channels, rng.below(13), 1 + rng.below(12));
    const bool from_table = trial % 2 == 0;
    for (std::size_t c = 0; c < channels; ++c) {
      const auto& pmf = tables.channels[c];
      for (std::size_t i = 0; i < g.plane(); ++i) {
        std::size_t k;
        if (from_table) {
          const auto u = static_cast<std::uint32_t>(rng.below(ChannelPmf::kTotal));
          k = static_cast<std::size_t>(std::upper_bound(pmf.cum.begin(), pmf.cum.end(), u) - pmf.cum.begin()) - 1;
        } else {
          k = rng.below(pmf.support());
        }
        g.values[c * g.plane() + i] = pmf.q_min + static_cast<std::int32_t>(k);
      }
    }
    symbols += g.values.size();
    const auto bytes = rc_encode(g, tables);
    if (rc_decode(bytes, tables, g.channels, g.height, g.width) != g) ++failures;
    const double info = information_bits(g, tables) / 8.0;
    const double excess = double(bytes.size()) - (kOverheadBytes + (1 + kOverheadRel) * info);
    worst = std::max(worst, excess);
    if (excess > 0) {
      ++over;
      std::fprintf(stderr, "over: from_table=%d C=%zu h=%zu w=%zu bytes=%zu info=%.3f\n", int(from_table), g.channels,
                   g.height, g.width, bytes.size(), info);
    }
  }
  o.detail << kFuzzGrids << " grids, " << symbols << " symbols, " << failures << " mismatches, worst margin "
           << 0.0 - worst << " bytes under the bound ";
  o.check(failures == 0, "exact round trip");
  o.check(over == 0, std::to_string(over) + " grids above 4 B + 0.1%");
}

void c4_gradients(Outcome& o, const fs::path&) {
  using Loss = nic::testing::Loss;
  struct Case {
    const char* name;
    std::function<std::pair<Loss, std::vector<Tensor<double>>>(Rng&)> make;
  };
  std::vector<Case> cases;
  cases.push_back({"conv", [](Rng& rng) {
    const int stride = 1 + static_cast<int>(rng.below(2));
    const std::size_t s = static_cast<std::size_t>(stride);
    const std::size_t ci = 1 + rng.below(3), co = 1 + rng.below(3), h = s * (1 + rng.below(3)), w = s * (1 + rng.below(3));
    auto target = random_tensor({co, h / s, w / s}, rng);
    Loss l = [=](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
      return ad::mse(t, ad::conv2d(t, v[0], v[1], v[2], stride), target);
    };
    return std::pair{l, std::vector{random_tensor({ci, h, w}, rng), random_tensor({co, ci, 5, 5}, rng),
                                    random_tensor({co}, rng)}};
  }});
  cases.push_back({"tconv", [](Rng& rng) {
    const std::size_t ci = 1 + rng.below(3), co = 1 + rng.below(3), h = 1 + rng.below(4), w = 1 + rng.below(4);
    auto target = random_tensor({co, 2 * h, 2 * w}, rng);
    Loss l = [=](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
      return ad::mse(t, ad::conv2d_transpose(t, v[0], v[1], v[2], 2), target);
    };
    return std::pair{l, std::vector{random_tensor({ci, h, w}, rng), random_tensor({ci, co, 5, 5}, rng),
                                    random_tensor({co}, rng)}};
  }});
  for (bool inverse : {false, true}) {
    cases.push_back({inverse ? "igdn" : "gdn", [inverse](Rng& rng) {
      const std::size_t c = 1 + rng.below(4), h = 1 + rng.below(3);
      auto target = random_tensor({c, h, h}, rng);
      Loss l = [=](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
        return ad::mse(t, inverse ? ad::igdn(t, v[0], v[1], v[2]) : ad::gdn(t, v[0], v[1], v[2]), target);
      };
      return std::pair{l, std::vector{random_tensor({c, h, h}, rng, -2, 2), random_tensor({c}, rng, 0.2, 2.0),
                                      random_tensor({c, c}, rng, 0.0, 0.5)}};
    }});
  }
  cases.push_back({"affine", [](Rng& rng) {
    const std::size_t c = 1 + rng.below(4), h = 1 + rng.below(4);
    auto target = random_tensor({c, h, h}, rng);
    Loss l = [=](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
      return ad::mse(t, ad::channel_affine(t, v[0], v[1], v[2]), target);
    };
    return std::pair{l, std::vector{random_tensor({c, h, h}, rng), random_tensor({c}, rng, 0.5, 1.5),
                                    random_tensor({c}, rng)}};
  }});
  cases.push_back({"likelihood", [](Rng& rng) {
    const std::size_t c = 1 + rng.below(3);
    auto d = make_density<double>(c, rng, kDefaultDensityWidths, rng.uniform(1, 10));
    for (auto& f : d.factors)
      for (auto& v : f.values()) v = rng.uniform(-1, 1);
    std::vector<Tensor<double>> in{random_tensor({c, 2, 3}, rng, -5, 5)};
    for (auto* group : {&d.matrices, &d.biases, &d.factors})
      for (auto& t : *group) in.push_back(t);
    const std::size_t k = d.matrices.size(), f = d.factors.size();
    Loss l = [=](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
      DensityParams<ad::Var> p;
      for (std::size_t i = 0; i < k; ++i) p.matrices.push_back(v[1 + i]);
      for (std::size_t i = 0; i < k; ++i) p.biases.push_back(v[1 + k + i]);
      for (std::size_t i = 0; i < f; ++i) p.factors.push_back(v[1 + 2 * k + i]);
      return ad::sum(t, likelihood(t, v[0], p));
    };
    return std::pair{l, in};
  }});
  cases.push_back({"rd_loss", [](Rng& rng) {
    CodecConfig cfg;
    cfg.shared_filters = 3 + rng.below(4);
    auto m = make_model<double>(cfg, rng.below(1u << 30));
    auto batch = std::vector{random_tensor({3, 16, 16}, rng, 0, 255)};
    const std::uint64_t noise_seed = rng.below(1u << 30);
    const double lambda = kLambdas[rng.below(4)];
    std::vector<Tensor<double>> in{m.params.encoder_convs[0].weight.ss, m.params.encoder_gdn[1].gamma.ss,
                                   m.params.decoder_convs[2].weight.ss, m.params.decoder_igdn[0].beta.s,
                                   m.params.entropy[0].biases[1]};
    Loss l = [=](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
      auto p = bind_constants(t, m.params);
      p.encoder_convs[0].weight.ss = v[0];
      p.encoder_gdn[1].gamma.ss = v[1];
      p.decoder_convs[2].weight.ss = v[2];
      p.decoder_igdn[0].beta.s = v[3];
      p.entropy[0].biases[1] = v[4];
      Rng noise(noise_seed);
      return rd_loss<double>(t, p, m.config, batch, lambda, noise, 1).J;
    };
    return std::pair{l, in};
  }});

  Rng rng(4);
  for (const auto& c : cases) {
    double worst = 0;
    for (int i = 0; i < kGradInstances; ++i) {
      auto [loss, inputs] = c.make(rng);
      worst = std::max(worst, gradient_error(loss, inputs, rng, 16, 1e-5));
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s %.1e ", c.name, worst);
    o.detail << buf;
    o.check(worst < kGradTol, c.name);
  }
}

void c5_rate_fidelity(Outcome& o, const fs::path& work) {
  const auto& model = desk(work).base.model;
  auto ims = synth_images(SynthKind::smooth, kRateImages / 2, kImageSize, 101);
  for (auto& im : synth_images(SynthKind::texture, kRateImages / 2, kImageSize, 202)) ims.push_back(std::move(im));
  double worst = 0;
  for (const auto& im : ims) {
    const double pixels = double(im.width * im.height);
    const auto r = encode_image(im, model, 1);
    const double actual = 8.0 * double(r.bitstream.total_bytes()) / pixels;
    const double est = r.estimated_bits / pixels;
    const double header = 8.0 * kHeaderBytes / pixels;
    const double gap = std::abs(actual - est);
    worst = std::max(worst, (gap - header) / est);
    if (gap > kRateRel * est + header) o.check(false, "image gap " + std::to_string(gap) + " bpp");
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "%d images, worst |gap| - header = %.3f%% of estimate ", kRateImages, 100 * worst);
  o.detail << buf;
}

RdCurve quartic_curve(Rng& rng, double shift) {
  RdCurve c;
  const std::size_t n = 4 + rng.below(4);
  const double lo = rng.uniform(24, 30), hi = lo + rng.uniform(6, 12);
  const double a = rng.uniform(-2.5, -1.5) + shift, b = rng.uniform(0.04, 0.09);
  const double q2 = rng.uniform(-1e-3, 1e-3), q4 = rng.uniform(-1e-5, 1e-5);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = lo + (hi - lo) * double(i) / double(n - 1) + rng.uniform(-0.3, 0.3);
    const double m = p - 0.5 * (lo + hi);
    c.points.push_back({0.0, std::pow(10.0, a + b * p + q2 * m * m + q4 * m * m * m * m), p, false});
  }
  return c;
}

void c6_bd_rate(Outcome& o, const fs::path&) {
  Rng rng(6);
  double worst_identity = 0, worst_double = 0, worst_oracle = 0;
  for (int i = 0; i < kBdRandomCurves; ++i) {
    const auto ref = quartic_curve(rng, 0.0);
    worst_identity = std::max(worst_identity, std::abs(bd_rate(ref, ref)));
    auto twice = ref;
    for (auto& p : twice.points) p.bpp *= 2;
    worst_double = std::max(worst_double, std::abs(bd_rate(ref, twice) - 100.0));
    const auto test = quartic_curve(rng, rng.uniform(-0.2, 0.2));
    worst_oracle = std::max(worst_oracle, std::abs(bd_rate(ref, test) - nic::testing::bd_rate_oracle(ref, test, 20000)));
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d curves: identity %.1e, doubled %.1e, oracle %.1e (percentage points) ",
                kBdRandomCurves, worst_identity, worst_double, worst_oracle);
  o.detail << buf;
  o.check(worst_identity <= kBdIdentityTol, "identity");
  o.check(worst_double <= kBdDoubleTol, "doubled rate");
  o.check(worst_oracle <= kBdOracleTol, "integration oracle");
}

void c7_forgetting(Outcome& o, const fs::path& work) {
  auto& d = desk(work);
  const auto& m1 = d.base.model;
  const auto& trace = d.base.trace;
  o.check(!trace.empty() && trace.back().J < trace.front().J, "training J decreased");

  const auto naive = adapt(m1, d.target.train, desk_config(Strategy::naive_ft, kAdaptSteps, 2)).model;
  const auto cawf = adapt(m1, d.target.train, desk_config(Strategy::cawf, kAdaptSteps, 2)).model;
  save_model(naive, (work / "naive_t2.nicm").string());
  save_model(cawf, (work / "cawf_t2.nicm").string());

  const double src1 = rd_cost(d.source.eval, m1, 1, kLambda), tgt1 = rd_cost(d.target.eval, m1, 1, kLambda);
  const double srcn = rd_cost(d.source.eval, naive, 1, kLambda), tgtn = rd_cost(d.target.eval, naive, 1, kLambda);
  const double tgtc = rd_cost(d.target.eval, cawf, 2, kLambda);
  const auto naive_rep = forgetting_report(d.source.eval, d.target.eval, m1, naive, ForgettingMode::naive,
                                           (work / "forgetting_naive").string());
  const auto cawf_rep = forgetting_report(d.source.eval, d.target.eval, m1, cawf, ForgettingMode::cawf,
                                          (work / "forgetting_cawf").string());
  const double cross = naive_rep.row("source", "g2f1").psnr;

  char buf[320];
  std::snprintf(buf, sizeof buf,
                "J(train) %.2f->%.2f; naive: target J %.3f->%.3f, source J %.3f->%.3f, g2f1 %.2f dB; "
                "cawf: target J %.3f, shared slice identical %d, source streams identical %d ",
                trace.front().J, trace.back().J, tgt1, tgtn, src1, srcn, cross, tgtc,
                int(bitwise_equal(slice_v1(cawf), m1)), int(cawf_rep.source_bitwise_identical));
  o.detail << buf;
  o.check(tgtn < tgt1, "(a) naive reduces target J");
  o.check(srcn > src1, "(a) naive increases source J");
  o.check(cross < kCatastrophicPsnr, "(b) g2f1 source PSNR < 15 dB");
  o.check(bitwise_equal(slice_v1(cawf), m1) && cawf.model_hash == m1.model_hash, "(c) shared params unchanged");
  o.check(cawf_rep.source_bitwise_identical, "(c) source bitstreams identical");
  o.check(tgtc < tgt1, "(c) cawf reduces target J");
}

void c8_determinism(Outcome& o, const fs::path& work) {
  auto& d = desk(work);
  CodecConfig cc;
  cc.lambda_index = *lambda_index_of(kLambda);
  const auto cfg = desk_config(Strategy::scratch, kShortSteps, 8);
  const auto a = train(d.source.train, cfg, cc), b = train(d.source.train, cfg, cc);
  o.check(serialize_model(a.model) == serialize_model(b.model), "train rerun");
  for (Strategy s : {Strategy::naive_ft, Strategy::selective_ft, Strategy::cawf}) {
    const auto c = desk_config(s, kShortSteps, 9);
    const auto x = adapt(d.base.model, d.target.train, c), y = adapt(d.base.model, d.target.train, c);
    o.check(serialize_model(x.model) == serialize_model(y.model), "adapt rerun " + to_string(s));
    if (s == Strategy::cawf) {
      for (const auto& im : d.source.eval) {
        for (int t : {1, 2}) {
          const auto e1 = serialize_bitstream(encode_image(im, x.model, t).bitstream);
          const auto e2 = serialize_bitstream(encode_image(im, y.model, t).bitstream);
          o.check(e1 == e2, "encode rerun");
        }
      }
    }
  }
  const auto reloaded = load_model((work / "source_t1.nicm").string());
  for (const auto& im : d.target.eval) {
    o.check(serialize_bitstream(encode_image(im, reloaded, 1).bitstream) ==
                serialize_bitstream(encode_image(im, d.base.model, 1).bitstream),
            "encode after reload");
  }
  o.detail << "train, 3 adapt strategies (" << kShortSteps << " steps each, run twice) and "
           << 2 * kEvalImages * 2 + kEvalImages << " encodes compared ";
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "nic_acceptance";
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--work-dir") && i + 1 < argc) {
      work = argv[++i];
    } else if (!std::strcmp(argv[i], "--only") && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: acceptance [--work-dir DIR] [--only N]\n");
      return 2;
    }
  }
  fs::create_directories(work);

  const std::pair<const char*, void (*)(Outcome&, const fs::path&)> criteria[] = {
      {"parameter counts", c1_param_counts},   {"selective-ft fraction", c2_selective_fraction},
      {"lossless range coding", c3_lossless},  {"gradient integrity", c4_gradients},
      {"rate-estimate fidelity", c5_rate_fidelity}, {"BD-rate correctness", c6_bd_rate},
      {"desk-scale forgetting", c7_forgetting}, {"determinism", c8_determinism},
  };
  int failed = 0;
  for (int i = 0; i < 8; ++i) {
    if (only && only != i + 1) continue;
    Outcome o;
    g_train_seconds_in_call = 0.0;
    const auto t0 = Clock::now();
    try {
      criteria[i].second(o, work);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = since(t0);
    // the source model is trained once: it counts toward 7, not toward 5
    double charged = secs;
    if (i == 4) charged -= g_train_seconds_in_call;
    if (i == 6 && g_train_seconds_in_call == 0.0) charged += g_train_seconds;
    const bool in_budget = charged <= kBudget[i + 1];
    if (!in_budget) o.check(false, "over the " + std::to_string(int(kBudget[i + 1])) + " s budget");
    std::printf("%s %d %-24s %6.1f s  %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, secs,
                o.detail.str().c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
