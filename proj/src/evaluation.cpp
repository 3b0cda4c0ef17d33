#include "nic/evaluation.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nic/error.hpp"
#include "nic/pipeline.hpp"
#include "nic/training.hpp"

namespace nic {

namespace fs = std::filesystem;

double mse(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) {
    throw ContractError("image size mismatch: " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                        " vs " + std::to_string(b.width) + "x" + std::to_string(b.height));
  }
  if (a.empty()) throw ContractError("mse of empty images");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = static_cast<double>(a.rgb[i]) - static_cast<double>(b.rgb[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.rgb.size());
}

Psnr psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m == 0.0) return {kLosslessPsnr, true};
  return {std::min(kLosslessPsnr, 10.0 * std::log10(255.0 * 255.0 / m)), false};
}

std::vector<double> fit_log_rate(const RdCurve& curve) {
  const auto n = static_cast<Eigen::Index>(curve.points.size());
  if (n < 4) throw EvaluationError("BD-rate needs at least 4 points per curve");
  Eigen::MatrixXd A(n, 4);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const RdPoint& p = curve.points[static_cast<std::size_t>(i)];
    if (!(p.bpp > 0)) throw EvaluationError("BD-rate: non-positive bpp");
    double pk = 1.0;
    for (int k = 0; k < 4; ++k, pk *= p.psnr) A(i, k) = pk;
    y(i) = std::log10(p.bpp);
  }
  const Eigen::VectorXd c = A.colPivHouseholderQr().solve(y);
  return {c(0), c(1), c(2), c(3)};
}

namespace {

double integrate_cubic(const std::vector<double>& c, double lo, double hi) {
  auto prim = [&](double x) {
    return c[0] * x + c[1] * x * x / 2 + c[2] * x * x * x / 3 + c[3] * x * x * x * x / 4;
  };
  return prim(hi) - prim(lo);
}

std::pair<double, double> psnr_range(const RdCurve& c) {
  auto [lo, hi] = std::minmax_element(c.points.begin(), c.points.end(),
                                      [](const RdPoint& a, const RdPoint& b) { return a.psnr < b.psnr; });
  return {lo->psnr, hi->psnr};
}

}  // namespace

double bd_rate(const RdCurve& reference, const RdCurve& test) {
  const auto cr = fit_log_rate(reference), ct = fit_log_rate(test);
  const auto [rlo, rhi] = psnr_range(reference);
  const auto [tlo, thi] = psnr_range(test);
  const double lo = std::max(rlo, tlo), hi = std::min(rhi, thi);
  if (!(hi > lo)) throw EvaluationError("BD-rate: curves have no overlapping PSNR range");
  const double avg = (integrate_cubic(ct, lo, hi) - integrate_cubic(cr, lo, hi)) / (hi - lo);
  return (std::pow(10.0, avg) - 1.0) * 100.0;
}

ImageResult measure_image(const Image& image, const CodecModel<float>& model, int use_version) {
  const EncodeResult enc = encode_image(image, model, use_version);
  ImageResult r;
  r.bpp = 8.0 * static_cast<double>(enc.bitstream.total_bytes()) / static_cast<double>(image.width * image.height);
  r.quality = psnr(image, enc.reconstruction);
  r.mse = mse(image, enc.reconstruction);
  return r;
}

RdPoint measure(std::span<const Image> images, const CodecModel<float>& model, int use_version, double lambda) {
  if (images.empty()) throw ContractError("measure: no images");
  std::vector<ImageResult> results(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) results[i] = measure_image(images[i], model, use_version);
  RdPoint p;
  p.lambda = lambda;
  p.lossless = true;
  for (const auto& r : results) {
    p.bpp += r.bpp;
    p.psnr += r.quality.db;
    p.lossless = p.lossless && r.quality.lossless;
  }
  p.bpp /= static_cast<double>(images.size());
  p.psnr /= static_cast<double>(images.size());
  return p;
}

double rd_cost(std::span<const Image> images, const CodecModel<float>& model, int use_version, double lambda) {
  if (images.empty()) throw ContractError("rd_cost: no images");
  double acc = 0.0;
  for (const Image& img : images) {
    const ImageResult r = measure_image(img, model, use_version);
    acc += r.bpp + lambda * r.mse;
  }
  return acc / static_cast<double>(images.size());
}

RdCurve rd_sweep(std::span<const Image> images, std::span<const CodecModel<float>> models, int use_version,
                 const std::string& domain, const std::string& codec, int t) {
  RdCurve curve{domain, codec, t, {}};
  for (const auto& m : models) {
    const int idx = m.config.lambda_index;
    const double lambda = idx >= 0 && idx < static_cast<int>(kLambdas.size()) ? kLambdas[static_cast<std::size_t>(idx)] : 0.0;
    curve.points.push_back(measure(images, m, use_version, lambda));
  }
  std::sort(curve.points.begin(), curve.points.end(), [](const RdPoint& a, const RdPoint& b) { return a.bpp < b.bpp; });
  return curve;
}

void write_curve_csv(const std::vector<RdCurve>& curves, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path);
  out << "domain,codec,t,lambda,bpp,psnr,lossless\n";
  out.precision(10);
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      out << c.domain << "," << c.codec << "," << c.t << "," << p.lambda << "," << p.bpp << "," << p.psnr << ","
          << (p.lossless ? 1 : 0) << "\n";
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<RdCurve> read_curve_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line != "domain,codec,t,lambda,bpp,psnr,lossless") throw FormatError("unexpected RD curve header in " + path, 0);
  std::vector<RdCurve> curves;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw FormatError("bad RD curve row: " + line, 0);
    const int t = std::stoi(f[2]);
    auto it = std::find_if(curves.begin(), curves.end(),
                           [&](const RdCurve& c) { return c.domain == f[0] && c.codec == f[1] && c.t == t; });
    if (it == curves.end()) {
      curves.push_back({f[0], f[1], t, {}});
      it = curves.end() - 1;
    }
    it->points.push_back({std::stod(f[3]), std::stod(f[4]), std::stod(f[5]), f[6] == "1"});
  }
  return curves;
}

ForgettingMode parse_forgetting_mode(const std::string& text) {
  if (text == "naive") return ForgettingMode::naive;
  if (text == "cawf") return ForgettingMode::cawf;
  throw ContractError("unknown forgetting mode '" + text + "' (naive|cawf)");
}

const ForgettingRow& ForgettingReport::row(const std::string& domain, const std::string& path) const {
  for (const auto& r : rows) {
    if (r.domain == domain && r.path == path) return r;
  }
  throw ContractError("no forgetting row " + domain + "/" + path);
}

namespace {

struct Accum {
  double bpp = 0, psnr = 0, mse = 0;
  bool lossless = true;
  std::size_t n = 0;

  void add(double b, const Image& a, const Image& x) {
    const Psnr q = nic::psnr(a, x);
    bpp += b;
    psnr += q.db;
    mse += nic::mse(a, x);
    lossless = lossless && q.lossless;
    ++n;
  }
  ForgettingRow row(std::string domain, std::string path) const {
    const double k = static_cast<double>(n);
    return {std::move(domain), std::move(path), bpp / k, psnr / k, lossless, mse / k};
  }
};

double bits_per_pixel(const Bitstream& b, const Image& img) {
  return 8.0 * static_cast<double>(b.total_bytes()) / static_cast<double>(img.width * img.height);
}

}  // namespace

ForgettingReport forgetting_report(std::span<const Image> source, std::span<const Image> target,
                                   const CodecModel<float>& m1, const CodecModel<float>& m2, ForgettingMode mode,
                                   const std::string& out_dir) {
  if (source.empty() || target.empty()) throw ContractError("forgetting_report: empty image set");
  if (m1.version != 1) throw VersionError("forgetting_report: model_t1 must be version 1");
  if (m1.config.shared_filters != m2.config.shared_filters || m1.config.layers != m2.config.layers) {
    throw ContractError("forgetting_report: models have different geometries");
  }
  if (mode == ForgettingMode::cawf) {
    if (m2.version != 2) throw VersionError("forgetting_report: cawf mode needs a version-2 model_t2");
    if (m2.model_hash != m1.model_hash) {
      throw ContractError("forgetting_report: model_t2 does not descend from model_t1 (hash lineage mismatch)");
    }
  }
  if (!out_dir.empty()) fs::create_directories(out_dir);

  ForgettingReport report;
  report.mode = mode;
  report.source_bitwise_identical = mode == ForgettingMode::cawf;
  const DecodeOptions cross{mode == ForgettingMode::naive};

  for (int d = 0; d < 2; ++d) {
    const bool is_source = d == 0;
    const auto images = is_source ? source : target;
    const std::string domain = is_source ? "source" : "target";
    const int v2 = mode == ForgettingMode::cawf && !is_source ? 2 : 1;
    Accum g1f1, g2f2, g2f1, interference;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const Image& x = images[i];
      const EncodeResult e1 = encode_image(x, m1, 1);
      const EncodeResult e2 = encode_image(x, m2, v2);
      const Image x21 = decode_image(e1.bitstream, m2, cross);
      g1f1.add(bits_per_pixel(e1.bitstream, x), x, e1.reconstruction);
      g2f2.add(bits_per_pixel(e2.bitstream, x), x, e2.reconstruction);
      g2f1.add(bits_per_pixel(e1.bitstream, x), x, x21);
      if (is_source) {
        interference.add(bits_per_pixel(e1.bitstream, x), e1.reconstruction, x21);
        if (mode == ForgettingMode::cawf) {
          report.source_bitwise_identical = report.source_bitwise_identical && e1.bitstream == e2.bitstream &&
                                            e1.reconstruction == e2.reconstruction &&
                                            e1.reconstruction == x21;
        }
        if (!out_dir.empty()) {
          char name[64];
          std::snprintf(name, sizeof name, "source_%03zu", i);
          write_image(difference_image(x21, x), (fs::path(out_dir) / (std::string(name) + "_error.png")).string());
          write_image(difference_image(x21, e1.reconstruction),
                      (fs::path(out_dir) / (std::string(name) + "_interference.png")).string());
          write_image(x21, (fs::path(out_dir) / (std::string(name) + "_g2f1.png")).string());
        }
      }
    }
    report.rows.push_back(g1f1.row(domain, "g1f1"));
    report.rows.push_back(g2f2.row(domain, "g2f2"));
    report.rows.push_back(g2f1.row(domain, "g2f1"));
    if (is_source) report.rows.push_back(interference.row(domain, "interference"));
  }
  if (!out_dir.empty()) write_forgetting_csv(report, (fs::path(out_dir) / "report.csv").string());
  return report;
}

void write_forgetting_csv(const ForgettingReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path);
  out << "mode,domain,path,bpp,psnr,lossless,mse\n";
  out.precision(10);
  const char* mode = report.mode == ForgettingMode::naive ? "naive" : "cawf";
  for (const auto& r : report.rows) {
    out << mode << "," << r.domain << "," << r.path << "," << r.bpp << "," << r.psnr << "," << (r.lossless ? 1 : 0)
        << "," << r.mse << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace nic
