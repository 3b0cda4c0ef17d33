#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "nic/bytes.hpp"
#include "nic/data.hpp"
#include "nic/error.hpp"
#include "nic/evaluation.hpp"
#include "nic/model_io.hpp"
#include "nic/pipeline.hpp"
#include "nic/training.hpp"

#ifndef NIC_VERSION
#define NIC_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace nic;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// key=value lines; '#' starts a comment line.
std::vector<std::pair<std::string, std::string>> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int n = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++n;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(n) + ": expected key=value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

// Fills options not given on the command line from --config.
void apply_config(CLI::App* cmd, const std::string& path) {
  for (const auto& [key, value] : read_config(path)) {
    if (key == "config") continue;
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (!opt) throw UsageError("unknown config key '" + key + "' for " + cmd->get_name());
    if (opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

void require(CLI::App* cmd, std::initializer_list<const char*> names) {
  for (const char* n : names) {
    const auto* opt = cmd->get_option(n);
    if (opt->count() == 0) throw UsageError(std::string(n) + " is required (flag or config key)");
  }
}

std::string joined(const std::vector<std::string>& parts) {
  std::string s;
  for (const auto& p : parts) s += (s.empty() ? "" : ",") + p;
  return s;
}

// Full resolved configuration of a run, replayable with --config.
void write_record(CLI::App* cmd, const std::string& path, int argc, char** argv) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "# nicc " << NIC_VERSION << "\n# argv:";
  for (int i = 0; i < argc; ++i) out << ' ' << argv[i];
  out << "\n# command " << (cmd->get_parent() && cmd->get_parent()->get_parent() ? cmd->get_parent()->get_name() + " " : "")
      << cmd->get_name() << "\n";
  for (const CLI::Option* opt : cmd->get_options()) {
    const std::string name = opt->get_single_name();
    if (opt->get_lnames().empty() || name == "help" || name == "config") continue;
    std::string value = opt->count() > 0 ? joined(opt->results()) : opt->get_default_str();
    if (value.empty()) continue;
    out << name << '=' << value << "\n";
  }
}

fs::path record_path_for_file(const std::string& output) {
  return fs::path(output).string() + ".repro.txt";
}

fs::path prepare_dir(const std::string& dir) {
  fs::create_directories(dir);
  return fs::path(dir);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int lambda_index_or_fail(double lambda) {
  const auto li = lambda_index_of(lambda);
  if (!li) {
    throw UsageError("lambda " + std::to_string(lambda) + " is not on the grid {0.002, 0.008, 0.016, 0.032}");
  }
  return *li;
}

struct TrainFlags {
  double lambda = 0.008;
  int steps = 2000;
  int batch = 8;
  int patch = 48;
  double lr = 1e-4;
  std::uint64_t seed = 1;
  int log_interval = 10;

  void add(CLI::App* cmd) {
    cmd->add_option("--lambda", lambda, "RD trade-off (0.002, 0.008, 0.016, 0.032)")->capture_default_str();
    cmd->add_option("--steps", steps, "optimizer steps")->capture_default_str();
    cmd->add_option("--batch", batch, "patches per step")->capture_default_str();
    cmd->add_option("--patch", patch, "patch size, multiple of 16")->capture_default_str();
    cmd->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    cmd->add_option("--seed", seed, "RNG seed")->capture_default_str();
    cmd->add_option("--log-interval", log_interval, "steps per trace row")->capture_default_str();
  }
  TrainConfig config(Strategy s) const {
    TrainConfig c;
    c.lambda = lambda;
    c.steps = steps;
    c.batch = batch;
    c.patch = patch;
    c.lr = lr;
    c.seed = seed;
    c.strategy = s;
    c.log_interval = log_interval;
    return c;
  }
};

void print_trace_summary(const TrainResult& r, double secs) {
  if (!r.trace.empty()) {
    const auto& a = r.trace.front();
    const auto& b = r.trace.back();
    std::printf("J %.4f -> %.4f  (R %.4f bpp, D %.2f) over %d steps, %.1f s\n", a.J, b.J, b.R, b.D, b.step, secs);
  }
  std::printf("model hash %016llx\n", static_cast<unsigned long long>(r.model.model_hash));
}

void print_model(const CodecModel<float>& m) {
  const auto& c = m.config;
  std::printf("model      NICM v%u\n", kModelFormatVersion);
  std::printf("filters    %zu shared, %zu custom\n", c.shared_filters, c.custom_filters);
  std::printf("layers     %zu x %zux%zu stride %zu\n", c.layers, c.kernel, c.kernel, c.stride);
  std::printf("lambda     index %d (%g)\n", c.lambda_index, kLambdas[static_cast<std::size_t>(c.lambda_index)]);
  std::printf("version    %d%s\n", m.version, m.has_affine() ? " (with channel affine)" : "");
  std::printf("hash       %016llx\n", static_cast<unsigned long long>(m.model_hash));
  std::printf("params     encoder %zu, decoder %zu, entropy %zu, total %zu\n", param_count(m, Part::encoder),
              param_count(m, Part::decoder), param_count(m, Part::entropy), param_count(m));
  for (std::size_t v = 0; v < m.tables.size(); ++v) {
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& ch : m.tables[v].channels) lo = std::min(lo, ch.support()), hi = std::max(hi, ch.support());
    std::printf("tables t=%zu %zu channels, support %zu..%zu\n", v + 1, m.tables[v].size(), lo, hi);
  }
}

void print_header(const BitstreamHeader& h, std::size_t total) {
  std::printf("bitstream       BS v%u\n", h.format_version);
  std::printf("codec_version   %u\n", h.codec_version);
  std::printf("lambda_index    %u\n", h.lambda_index);
  std::printf("model_hash      %016llx\n", static_cast<unsigned long long>(h.model_hash));
  std::printf("width           %u\n", h.width);
  std::printf("height          %u\n", h.height);
  std::printf("payload_len     %u\n", h.payload_len);
  std::printf("bpp             %.4f\n", 8.0 * static_cast<double>(total) / (double(h.width) * double(h.height)));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nicc: learned image codec with continual adaptation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", NIC_VERSION);
  std::string config_path;
  auto with_config = [&](CLI::App* cmd) { cmd->add_option("--config", config_path, "key=value file"); };

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic domain (PNGs + manifest)");
  std::string kind = "smooth", out_dir;
  std::size_t n_images = 32, size = 96, eval_count = 8;
  std::uint64_t synth_seed = 1;
  synth->add_option("--kind", kind, "smooth | texture")->capture_default_str();
  synth->add_option("--n", n_images, "image count")->capture_default_str();
  synth->add_option("--size", size, "side length, multiple of 16")->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--eval-count", eval_count, "last images tagged eval")->capture_default_str();
  synth->add_option("--out", out_dir, "output directory");
  with_config(synth);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a base codec from scratch");
  std::string data;
  TrainFlags tf;
  std::size_t filters = 64, custom_filters = 16;
  train_cmd->add_option("--data", data, "manifest (train split is used)");
  train_cmd->add_option("--out", out_dir, "output directory");
  train_cmd->add_option("--filters", filters, "shared filters per layer")->capture_default_str();
  train_cmd->add_option("--custom-filters", custom_filters, "filters added by cawf adaptation")->capture_default_str();
  tf.add(train_cmd);
  with_config(train_cmd);

  // adapt
  auto* adapt_cmd = app.add_subcommand("adapt", "adapt a trained codec to a new domain");
  std::string model_path, strategy = "cawf";
  adapt_cmd->add_option("--model", model_path, "source model (.nicm)");
  adapt_cmd->add_option("--data", data, "target manifest (train split is used)");
  adapt_cmd->add_option("--strategy", strategy, "naive | selective | cawf")->capture_default_str();
  adapt_cmd->add_option("--out", out_dir, "output directory");
  TrainFlags af;
  af.add(adapt_cmd);
  with_config(adapt_cmd);

  // encode / decode
  auto* encode_cmd = app.add_subcommand("encode", "image -> bitstream");
  std::string input, output, recon;
  int t = 1;
  encode_cmd->add_option("--model", model_path, "model (.nicm)");
  encode_cmd->add_option("--input", input, "PNG or PPM image");
  encode_cmd->add_option("--output", output, "bitstream file");
  encode_cmd->add_option("-t,--t", t, "codec version to use")->capture_default_str();
  encode_cmd->add_option("--recon", recon, "also write the reconstruction");
  with_config(encode_cmd);

  auto* decode_cmd = app.add_subcommand("decode", "bitstream -> image");
  bool bypass = false;
  decode_cmd->add_option("--model", model_path, "model (.nicm)");
  decode_cmd->add_option("--input", input, "bitstream file");
  decode_cmd->add_option("--output", output, "PNG or PPM image");
  decode_cmd->add_flag("--bypass-hash-check", bypass, "experiment mode: decode with a mismatched model");
  with_config(decode_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluation");
  eval_cmd->require_subcommand(1);
  auto* rd_cmd = eval_cmd->add_subcommand("rd", "RD points of one or more models");
  std::vector<std::string> models;
  std::string split = "eval", domain = "domain", codec = "codec";
  rd_cmd->add_option("--models", models, "models, one per lambda")->delimiter(',');
  rd_cmd->add_option("--data", data, "manifest");
  rd_cmd->add_option("--split", split, "train | eval")->capture_default_str();
  rd_cmd->add_option("-t,--t", t)->capture_default_str();
  rd_cmd->add_option("--domain", domain)->capture_default_str();
  rd_cmd->add_option("--codec", codec)->capture_default_str();
  rd_cmd->add_option("--out", output, "curve CSV");
  with_config(rd_cmd);

  auto* bd_cmd = eval_cmd->add_subcommand("bdrate", "BD-rate between two curves of a CSV");
  std::string curves, reference, test;
  bd_cmd->add_option("--curves", curves, "curve CSV (eval rd output, possibly concatenated)");
  bd_cmd->add_option("--reference", reference, "codec name of the anchor curve");
  bd_cmd->add_option("--test", test, "codec name of the tested curve");
  bd_cmd->add_option("--domain", domain, "restrict to one domain");
  with_config(bd_cmd);

  auto* fg_cmd = eval_cmd->add_subcommand("forgetting", "forgetting report of an adapted model");
  std::string source, target, model2, mode = "cawf";
  fg_cmd->add_option("--source", source, "source manifest (eval split)");
  fg_cmd->add_option("--target", target, "target manifest (eval split)");
  fg_cmd->add_option("--model1", model_path, "model before adaptation");
  fg_cmd->add_option("--model2", model2, "model after adaptation");
  fg_cmd->add_option("--mode", mode, "naive | cawf")->capture_default_str();
  fg_cmd->add_option("--out", out_dir, "output directory");
  with_config(fg_cmd);

  auto* inspect_cmd = app.add_subcommand("inspect", "print a bitstream header or model summary");
  inspect_cmd->add_option("file", input, "bitstream or model file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    CLI::App* cmd = app.get_subcommands().front();
    if (cmd == eval_cmd) cmd = eval_cmd->get_subcommands().front();
    if (!config_path.empty()) apply_config(cmd, config_path);
    const auto t0 = std::chrono::steady_clock::now();

    if (cmd == synth) {
      require(cmd, {"--out"});
      const auto dir = prepare_dir(out_dir);
      const auto m = synth_domain(parse_synth_kind(kind), n_images, size, synth_seed, dir.string(), eval_count);
      double g = 0;
      const auto ims = load_split(m, Split::train);
      for (const auto& im : ims) g += mean_gradient_magnitude(im);
      std::printf("%zu images (%zu eval) in %s, fingerprint %016llx, mean gradient %.2f\n", m.entries.size(),
                  m.files(Split::eval).size(), dir.c_str(), static_cast<unsigned long long>(m.fingerprint()),
                  ims.empty() ? 0.0 : g / double(ims.size()));
      write_record(cmd, (dir / "repro.txt").string(), argc, argv);
    } else if (cmd == train_cmd) {
      require(cmd, {"--data", "--out"});
      const auto dir = prepare_dir(out_dir);
      const auto manifest = read_manifest(data);
      const auto images = load_split(manifest, Split::train);
      CodecConfig cc;
      cc.shared_filters = filters;
      cc.custom_filters = custom_filters;
      cc.lambda_index = lambda_index_or_fail(tf.lambda);
      write_record(cmd, (dir / "repro.txt").string(), argc, argv);
      const auto r = train(images, tf.config(Strategy::scratch), cc);
      save_model(r.model, (dir / "model.nicm").string());
      write_trace_csv(r.trace, (dir / "trace.csv").string());
      print_trace_summary(r, seconds_since(t0));
    } else if (cmd == adapt_cmd) {
      require(cmd, {"--model", "--data", "--out"});
      const auto dir = prepare_dir(out_dir);
      const auto src = load_model(model_path);
      const auto images = load_split(read_manifest(data), Split::train);
      if (strategy != "naive" && strategy != "selective" && strategy != "cawf") {
        throw UsageError("--strategy must be naive, selective or cawf");
      }
      auto cfg = af.config(parse_strategy(strategy));
      if (cmd->get_option("--lambda")->count() == 0) {
        cfg.lambda = kLambdas[static_cast<std::size_t>(src.config.lambda_index)];
        af.lambda = cfg.lambda;
        cmd->get_option("--lambda")->default_str(std::to_string(cfg.lambda));
      }
      write_record(cmd, (dir / "repro.txt").string(), argc, argv);
      const auto r = adapt(src, images, cfg);
      save_model(r.model, (dir / "model.nicm").string());
      write_trace_csv(r.trace, (dir / "trace.csv").string());
      const auto tl = tally(r.model, make_mask(r.model, cfg.strategy));
      std::printf("%s: %zu of %zu parameters trainable (%.2f%%)\n", to_string(cfg.strategy).c_str(), tl.trainable,
                  tl.total, 100 * tl.fraction());
      print_trace_summary(r, seconds_since(t0));
    } else if (cmd == encode_cmd) {
      require(cmd, {"--model", "--input", "--output"});
      const auto m = load_model(model_path);
      const auto im = read_image(input);
      const auto r = encode_image(im, m, t);
      const auto bytes = serialize_bitstream(r.bitstream);
      write_file(output, bytes);
      if (!recon.empty()) write_image(r.reconstruction, recon);
      write_record(cmd, record_path_for_file(output).string(), argc, argv);
      const auto q = psnr(im, r.reconstruction);
      std::printf("%zu bytes, %.4f bpp, PSNR %.2f dB%s\n", bytes.size(),
                  8.0 * double(bytes.size()) / double(im.width * im.height), q.db, q.lossless ? " (lossless)" : "");
    } else if (cmd == decode_cmd) {
      require(cmd, {"--model", "--input", "--output"});
      const auto m = load_model(model_path);
      const auto b = parse_bitstream(read_file(input));
      DecodeOptions opt;
      opt.bypass_hash_check = bypass;
      write_image(decode_image(b, m, opt), output);
      write_record(cmd, record_path_for_file(output).string(), argc, argv);
      std::printf("%ux%u decoded with t=%u\n", b.header.width, b.header.height, b.header.codec_version);
    } else if (cmd == rd_cmd) {
      require(cmd, {"--models", "--data", "--out"});
      if (split != "train" && split != "eval") throw UsageError("--split must be train or eval");
      const auto images = load_split(read_manifest(data), split == "train" ? Split::train : Split::eval);
      std::vector<CodecModel<float>> ms;
      for (const auto& p : models) ms.push_back(load_model(p));
      const auto curve = rd_sweep(images, ms, t, domain, codec, t);
      write_curve_csv({curve}, output);
      write_record(cmd, record_path_for_file(output).string(), argc, argv);
      for (const auto& p : curve.points) std::printf("lambda %.3f  %.4f bpp  %.2f dB\n", p.lambda, p.bpp, p.psnr);
    } else if (cmd == bd_cmd) {
      require(cmd, {"--curves", "--reference", "--test"});
      const auto all = read_curve_csv(curves);
      auto pick = [&](const std::string& name) {
        const RdCurve* found = nullptr;
        for (const auto& c : all) {
          if (c.codec != name || (cmd->get_option("--domain")->count() && c.domain != domain)) continue;
          if (found) throw UsageError("several curves named '" + name + "'; pass --domain");
          found = &c;
        }
        if (!found) throw EvaluationError("no curve named '" + name + "' in " + curves);
        return *found;
      };
      std::printf("BD-rate %s vs %s: %+.3f%%\n", test.c_str(), reference.c_str(), bd_rate(pick(reference), pick(test)));
    } else if (cmd == fg_cmd) {
      require(cmd, {"--source", "--target", "--model1", "--model2", "--out"});
      const auto dir = prepare_dir(out_dir);
      const auto src = load_split(read_manifest(source), Split::eval);
      const auto tgt = load_split(read_manifest(target), Split::eval);
      const auto rep = forgetting_report(src, tgt, load_model(model_path), load_model(model2),
                                         parse_forgetting_mode(mode), dir.string());
      write_record(cmd, (dir / "repro.txt").string(), argc, argv);
      for (const auto& r : rep.rows) {
        std::printf("%-7s %-13s %8.4f bpp  %6.2f dB\n", r.domain.c_str(), r.path.c_str(), r.bpp, r.psnr);
      }
      if (rep.mode == ForgettingMode::cawf) {
        std::printf("source bitstreams identical at t=2: %s\n", rep.source_bitwise_identical ? "yes" : "no");
      }
    } else if (cmd == inspect_cmd) {
      const auto bytes = read_file(input);
      if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, "NICM")) {
        print_model(parse_model(bytes));
      } else {
        const auto b = parse_bitstream(bytes);
        print_header(b.header, b.total_bytes());
      }
    }
    return kOk;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const CLI::Error& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kNumeric;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
}
