#pragma once

// PSNR/bpp measurement, RD curves, BD-rate and the forgetting experiment.

#include <span>
#include <string>
#include <vector>

#include "nic/codec_model.hpp"
#include "nic/image.hpp"

namespace nic {

inline constexpr double kLosslessPsnr = 99.0;

struct Psnr {
  double db = 0.0;  // kLosslessPsnr when lossless
  bool lossless = false;
};

double mse(const Image& a, const Image& b);
Psnr psnr(const Image& a, const Image& b);

struct RdPoint {
  double lambda = 0.0;
  double bpp = 0.0;   // from bitstream bytes, header included
  double psnr = 0.0;  // mean over images
  bool lossless = false;
};

struct RdCurve {
  std::string domain;
  std::string codec;
  int t = 1;
  std::vector<RdPoint> points;
};

// Classic Bjontegaard delta rate in percent: cubic least-squares fit of
// log10(bpp) against PSNR for each curve, integrated over the common PSNR
// interval. Positive means `test` needs more bits than `reference`.
double bd_rate(const RdCurve& reference, const RdCurve& test);

// Coefficients c0..c3 of the cubic log10(bpp) = sum c_k psnr^k.
std::vector<double> fit_log_rate(const RdCurve& curve);

struct ImageResult {
  double bpp = 0.0;
  Psnr quality;
  double mse = 0.0;
};

ImageResult measure_image(const Image& image, const CodecModel<float>& model, int use_version);

// Mean bpp and mean PSNR over images.
RdPoint measure(std::span<const Image> images, const CodecModel<float>& model, int use_version, double lambda);

// Operational RD cost: mean over images of bpp + lambda * MSE (0..255 units).
double rd_cost(std::span<const Image> images, const CodecModel<float>& model, int use_version, double lambda);

// One point per model, sorted by bpp. Lambdas are taken from each model's
// lambda_index.
RdCurve rd_sweep(std::span<const Image> images, std::span<const CodecModel<float>> models, int use_version,
                 const std::string& domain, const std::string& codec, int t);

void write_curve_csv(const std::vector<RdCurve>& curves, const std::string& path);
std::vector<RdCurve> read_curve_csv(const std::string& path);

enum class ForgettingMode { naive, cawf };

ForgettingMode parse_forgetting_mode(const std::string& text);

struct ForgettingRow {
  std::string domain;  // source | target
  std::string path;    // g1f1 | g2f2 | g2f1 | interference
  double bpp = 0.0;
  double psnr = 0.0;
  bool lossless = false;
  double mse = 0.0;
};

struct ForgettingReport {
  ForgettingMode mode = ForgettingMode::naive;
  std::vector<ForgettingRow> rows;  // 2 domains x 3 paths + 1 interference row
  // cawf mode only: every source bitstream and reconstruction at t=2 equals t=1.
  bool source_bitwise_identical = false;

  const ForgettingRow& row(const std::string& domain, const std::string& path) const;
};

// g1f1: encode and decode with model_t1. g2f2: both with model_t2 (source
// routed through version 1 and target through version 2 in cawf mode).
// g2f1: t=1 bitstreams decoded by model_t2 (hash check bypassed in naive
// mode). interference: g2f1 against the g1f1 reconstruction of source images.
// With a non-empty out_dir, writes report.csv and per-image difference PNGs.
ForgettingReport forgetting_report(std::span<const Image> source, std::span<const Image> target,
                                   const CodecModel<float>& model_t1, const CodecModel<float>& model_t2,
                                   ForgettingMode mode, const std::string& out_dir = "");

void write_forgetting_csv(const ForgettingReport& report, const std::string& path);

}  // namespace nic
