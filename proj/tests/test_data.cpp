#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nic/data.hpp"
#include "nic/error.hpp"

using namespace nic;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("nic_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Synth, DeterministicPerSeed) {
  for (auto kind : {SynthKind::smooth, SynthKind::texture}) {
    EXPECT_EQ(synth_images(kind, 3, 32, 5), synth_images(kind, 3, 32, 5));
    EXPECT_NE(synth_images(kind, 3, 32, 5), synth_images(kind, 3, 32, 6));
  }
  EXPECT_THROW(synth_images(SynthKind::smooth, 1, 40, 1), Error);
}

TEST(Synth, DomainsDifferInGradientEnergy) {
  const auto smooth = synth_images(SynthKind::smooth, 16, 64, 1);
  const auto texture = synth_images(SynthKind::texture, 16, 64, 2);
  double gs = 0, gt = 0;
  for (const auto& im : smooth) gs += mean_gradient_magnitude(im);
  for (const auto& im : texture) gt += mean_gradient_magnitude(im);
  EXPECT_GT(gt, 5 * gs);
}

TEST(Synth, GradientMagnitudeOracle) {
  Image im(4, 3);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 4; ++x)
      for (std::size_t c = 0; c < 3; ++c) im.at(y, x, c) = static_cast<std::uint8_t>(10 * x + 20 * y + c);
  // the last row/column is ignored, so a corrupted corner does not count
  im.at(2, 3, 0) = 255;
  EXPECT_NEAR(mean_gradient_magnitude(im), std::sqrt(500.0), 1e-12);
}

TEST(Synth, DomainOnDisk) {
  const auto dir = scratch("domain");
  const auto m = synth_domain(SynthKind::texture, 6, 32, 3, dir.string(), 2);
  EXPECT_EQ(m.files(Split::train).size(), 4u);
  EXPECT_EQ(m.files(Split::eval).size(), 2u);
  const auto back = read_manifest((dir / "manifest.txt").string());
  EXPECT_EQ(back.entries, m.entries);
  EXPECT_EQ(back.fingerprint(), m.fingerprint());
  const auto ims = synth_images(SynthKind::texture, 6, 32, 3);
  const auto eval = load_split(back, Split::eval);
  ASSERT_EQ(eval.size(), 2u);
  EXPECT_EQ(eval[1], ims[5]);
  fs::remove_all(dir);
}

TEST(Manifest, FingerprintIffFileList) {
  DatasetManifest a;
  a.name = "x";
  a.entries = {{"a.png", Split::train}, {"b.png", Split::eval}};
  auto b = a;
  b.name = "y";
  b.root = "/elsewhere";
  b.entries[1].split = Split::train;
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  b.entries[1].file = "c.png";
  EXPECT_NE(a.fingerprint(), b.fingerprint());
  auto c = a;
  std::swap(c.entries[0], c.entries[1]);
  EXPECT_NE(a.fingerprint(), c.fingerprint());
}

TEST(Manifest, ParsingAndOverlap) {
  const auto dir = scratch("manifest");
  write_image(Image(4, 4), (dir / "a.ppm").string());
  {
    std::ofstream f(dir / "manifest.txt");
    f << "# comment\nname demo\n\ntrain a.ppm\neval a.ppm\n";
  }
  const auto m = read_manifest((dir / "manifest.txt").string());
  EXPECT_EQ(m.name, "demo");
  EXPECT_EQ(m.entries.size(), 2u);
  EXPECT_THROW(load_split(m, Split::train), Error);
  {
    std::ofstream f(dir / "bad.txt");
    f << "test a.ppm\n";
  }
  EXPECT_THROW(read_manifest((dir / "bad.txt").string()), Error);
  fs::remove_all(dir);
}

TEST(Patches, BoundsContentAndDeterminism) {
  const auto ims = synth_images(SynthKind::smooth, 3, 48, 4);
  Rng a(1), b(1);
  std::vector<PatchOrigin> oa, ob;
  const auto pa = sample_patches(ims, 16, 50, a, &oa);
  const auto pb = sample_patches(ims, 16, 50, b, &ob);
  ASSERT_EQ(pa.size(), 50u);
  for (std::size_t k = 0; k < 50; ++k) {
    EXPECT_TRUE(bitwise_equal(pa[k], pb[k]));
    ASSERT_EQ(pa[k].shape(), (Shape{3, 16, 16}));
    const auto& o = oa[k];
    ASSERT_LT(o.image, 3u);
    ASSERT_LE(o.y + 16, 48u);
    ASSERT_LE(o.x + 16, 48u);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 16; y += 5)
        for (std::size_t x = 0; x < 16; x += 5)
          EXPECT_EQ(pa[k][(c * 16 + y) * 16 + x], float(ims[o.image].at(o.y + y, o.x + x, c)));
  }
  EXPECT_THROW(sample_patches(ims, 64, 1, a), Error);
}

TEST(Patches, OriginsUniform) {
  const auto ims = synth_images(SynthKind::smooth, 1, 32, 5);
  Rng rng(2);
  std::vector<PatchOrigin> o;
  const std::size_t n = 102000;
  sample_patches(ims, 16, n, rng, &o);
  std::vector<double> cx(17), cy(17);
  for (const auto& p : o) ++cx[p.x], ++cy[p.y];
  auto chi2 = [&](const std::vector<double>& c) {
    double s = 0;
    for (double v : c) s += (v - 6000.0) * (v - 6000.0) / 6000.0;
    return s;
  };
  // 16 dof, p = 0.001
  EXPECT_LT(chi2(cx), 39.25);
  EXPECT_LT(chi2(cy), 39.25);
}

TEST(ImageIo, PpmAndPngRoundTrip) {
  const auto dir = scratch("io");
  Rng rng(3);
  Image im(7, 5);
  for (auto& v : im.rgb) v = static_cast<std::uint8_t>(rng.below(256));
  EXPECT_EQ(decode_ppm(encode_ppm(im)), im);
  for (const char* ext : {".png", ".ppm"}) {
    const auto p = (dir / (std::string("x") + ext)).string();
    write_image(im, p);
    EXPECT_EQ(read_image(p), im) << ext;
  }
  EXPECT_THROW(read_image((dir / "missing.png").string()), Error);
  EXPECT_THROW(decode_ppm({'P', '3', '\n'}), Error);
  fs::remove_all(dir);
}

TEST(ImageIo, TensorConversionRoundsAndClamps) {
  Tensor<float> x({3, 1, 2}, std::vector<float>{-3.0f, 300.0f, 1.5f, 2.49f, 254.5f, 0.0f});
  const auto im = to_image(x);
  EXPECT_EQ(im.at(0, 0, 0), 0);
  EXPECT_EQ(im.at(0, 1, 0), 255);
  EXPECT_EQ(im.at(0, 0, 1), 2);
  EXPECT_EQ(im.at(0, 1, 1), 2);
  EXPECT_EQ(im.at(0, 0, 2), 255);
  EXPECT_TRUE(bitwise_equal(to_tensor<float>(to_image(to_tensor<float>(im))), to_tensor<float>(im)));
}
