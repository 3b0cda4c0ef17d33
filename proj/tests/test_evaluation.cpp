#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "bd_oracle.hpp"
#include "nic/error.hpp"
#include "nic/evaluation.hpp"
#include "nic/pipeline.hpp"

using namespace nic;
namespace fs = std::filesystem;

namespace {

Image noise_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  Rng rng(seed);
  Image im(w, h);
  for (auto& v : im.rgb) v = static_cast<std::uint8_t>(rng.below(256));
  return im;
}

Image smooth_image(std::size_t w, std::size_t h, double phase) {
  Image im(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        im.at(y, x, c) = static_cast<std::uint8_t>(128 + 90 * std::sin(0.1 * double(x) + 0.07 * double(y) + phase + double(c)));
  return im;
}

RdCurve curve_from(const std::vector<double>& psnrs, double (*log_rate)(double)) {
  RdCurve c;
  for (double q : psnrs) c.points.push_back({0.0, std::pow(10.0, log_rate(q)), q, false});
  return c;
}

}  // namespace

TEST(Psnr, Cases) {
  const auto a = noise_image(16, 8, 1);
  const auto same = psnr(a, a);
  EXPECT_TRUE(same.lossless);
  EXPECT_EQ(same.db, kLosslessPsnr);
  auto b = a;
  for (auto& v : b.rgb) v = v < 128 ? v + 16 : v - 16;
  EXPECT_DOUBLE_EQ(mse(a, b), 256.0);
  EXPECT_NEAR(psnr(a, b).db, 24.04840, 1e-5);
  EXPECT_FALSE(psnr(a, b).lossless);
}

TEST(Psnr, OracleAndSymmetry) {
  const auto a = noise_image(20, 12, 2), b = noise_image(20, 12, 3);
  double se = 0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) se += std::pow(double(a.rgb[i]) - double(b.rgb[i]), 2);
  const double m = se / double(a.rgb.size());
  EXPECT_NEAR(psnr(a, b).db, 10 * std::log10(255.0 * 255.0 / m), 1e-10);
  EXPECT_EQ(psnr(a, b).db, psnr(b, a).db);
  EXPECT_THROW(psnr(a, noise_image(12, 20, 2)), Error);
}

TEST(BdRate, IdentityAndDoubling) {
  const std::vector<double> q{28, 31, 34, 37};
  const auto base = curve_from(q, [](double p) { return -2.0 + 0.06 * p; });
  EXPECT_NEAR(bd_rate(base, base), 0.0, 1e-9);
  const auto twice = curve_from(q, [](double p) { return std::log10(2.0) - 2.0 + 0.06 * p; });
  EXPECT_NEAR(bd_rate(base, twice), 100.0, 1e-6);
  EXPECT_NEAR(bd_rate(twice, base), -50.0, 1e-6);
}

TEST(BdRate, QuarticCurvesAgainstNumericOracle) {
  const auto ref = curve_from({26, 28.5, 31, 33, 36, 38},
                              [](double p) { return -3 + 0.1 * p + 1e-5 * std::pow(p - 30, 4); });
  const auto test = curve_from({27, 29, 32, 35, 37}, [](double p) {
    return -2.8 + 0.095 * p - 2e-5 * std::pow(p - 32, 4) + 1e-3 * std::pow(p - 32, 2);
  });
  const double got = bd_rate(ref, test);
  EXPECT_NEAR(got, nic::testing::bd_rate_oracle(ref, test), 1e-6 * std::max(1.0, std::abs(got)));
  const double back = bd_rate(test, ref);
  EXPECT_NEAR((1 + got / 100) * (1 + back / 100), 1.0, 1e-9);
}

TEST(BdRate, Errors) {
  const auto three = curve_from({30, 32, 34}, [](double p) { return 0.05 * p - 2; });
  const auto four = curve_from({30, 32, 34, 36}, [](double p) { return 0.05 * p - 2; });
  const auto far = curve_from({40, 42, 44, 46}, [](double p) { return 0.05 * p - 2; });
  EXPECT_THROW(bd_rate(three, four), EvaluationError);
  EXPECT_THROW(bd_rate(four, far), EvaluationError);
}

TEST(RdSweep, BppMatchesBitstreamBytes) {
  std::vector<CodecModel<float>> models;
  for (int li : {2, 0}) {
    CodecConfig cfg;
    cfg.shared_filters = 8;
    cfg.lambda_index = li;
    auto m = make_model<float>(cfg, 40 + li);
    freeze_model_tables(m);
    models.push_back(m);
  }
  const std::vector<Image> ims{smooth_image(40, 24, 0.0)};
  const auto curve = rd_sweep(ims, models, 1, "smooth", "base", 1);
  ASSERT_EQ(curve.points.size(), 2u);
  EXPECT_LE(curve.points[0].bpp, curve.points[1].bpp);
  for (const auto& p : curve.points) {
    const auto& m = p.lambda == 0.016 ? models[0] : models[1];
    const auto r = encode_image(ims[0], m, 1);
    EXPECT_DOUBLE_EQ(p.bpp, 8.0 * double(r.bitstream.total_bytes()) / (40.0 * 24.0));
    EXPECT_DOUBLE_EQ(p.psnr, psnr(ims[0], r.reconstruction).db);
  }
  const auto path = (fs::temp_directory_path() / "nic_curve.csv").string();
  write_curve_csv({curve}, path);
  const auto back = read_curve_csv(path);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].domain, "smooth");
  ASSERT_EQ(back[0].points.size(), 2u);
  EXPECT_NEAR(back[0].points[1].bpp, curve.points[1].bpp, 1e-9 * curve.points[1].bpp);
  fs::remove(path);
}

TEST(Forgetting, CawfReportStructure) {
  CodecConfig cfg;
  cfg.shared_filters = 8;
  cfg.custom_filters = 2;
  auto m1 = make_model<float>(cfg, 50);
  freeze_model_tables(m1);
  auto m2 = grow_cawf(m1, 51);
  freeze_model_tables(m2);
  const std::vector<Image> src{smooth_image(32, 32, 0.3), smooth_image(32, 32, 1.1)};
  const std::vector<Image> tgt{noise_image(32, 32, 7)};
  const auto dir = (fs::temp_directory_path() / "nic_forgetting").string();
  fs::remove_all(dir);
  const auto rep = forgetting_report(src, tgt, m1, m2, ForgettingMode::cawf, dir);
  EXPECT_EQ(rep.rows.size(), 7u);
  EXPECT_TRUE(rep.source_bitwise_identical);
  EXPECT_EQ(rep.row("source", "g1f1").psnr, rep.row("source", "g2f1").psnr);
  EXPECT_TRUE(rep.row("source", "interference").lossless);
  EXPECT_TRUE(fs::exists(fs::path(dir) / "report.csv"));
  EXPECT_TRUE(fs::exists(fs::path(dir) / "source_001_interference.png"));
  EXPECT_THROW(forgetting_report(src, tgt, m1, m1, ForgettingMode::cawf), Error);
  fs::remove_all(dir);
}

TEST(Forgetting, NaiveModeDecodesAcrossModels) {
  CodecConfig cfg;
  cfg.shared_filters = 8;
  auto m1 = make_model<float>(cfg, 60);
  freeze_model_tables(m1);
  auto m2 = make_model<float>(cfg, 61);
  freeze_model_tables(m2);
  const std::vector<Image> src{smooth_image(32, 32, 0.0)};
  const auto rep = forgetting_report(src, src, m1, m2, ForgettingMode::naive);
  EXPECT_EQ(rep.rows.size(), 7u);
  EXPECT_FALSE(rep.source_bitwise_identical);
  EXPECT_LT(rep.row("source", "g2f1").psnr, rep.row("source", "g1f1").psnr + 50);
}
