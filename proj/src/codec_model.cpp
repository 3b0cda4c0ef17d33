#include "nic/codec_model.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "nic/error.hpp"
#include "nic/hash.hpp"

namespace nic {

void CodecConfig::validate() const {
  if (shared_filters < 1) throw ValueError("shared_filters must be >= 1");
  if (layers < 1 || layers > 8) throw ValueError("layers must be in [1, 8]");
  if (kernel < 1 || kernel % 2 == 0) throw ValueError("kernel must be odd");
  if (stride < 1 || stride > kernel) throw ValueError("stride must be in [1, kernel]");
  if (lambda_index < 0 || lambda_index > 255) throw ValueError("lambda_index must fit in a byte");
  if (density_widths.size() < 2 || density_widths.front() != 1 || density_widths.back() != 1) {
    throw ValueError("density widths must start and end with 1");
  }
}

std::size_t CodecConfig::downsampling() const {
  std::size_t f = 1;
  for (std::size_t i = 0; i < layers; ++i) f *= stride;
  return f;
}

void check_version(int model_version, int use_version) {
  if (use_version < 1 || use_version > model_version) {
    throw VersionError("use_version " + std::to_string(use_version) + " not available in a version-" +
                       std::to_string(model_version) + " model");
  }
}

namespace {

template <typename T>
Tensor<T> trunc_normal(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.truncated_normal(stddev));
  return t;
}

// Channel groups (shared, custom) of one layer's input and output.
struct Groups {
  std::size_t in_s, in_c, out_s, out_c;
};

Groups encoder_groups(const CodecConfig& c, std::size_t i, bool grown) {
  const std::size_t custom = grown ? c.custom_filters : 0;
  return {i == 0 ? kImageChannels : c.shared_filters, i == 0 ? 0 : custom, c.shared_filters, custom};
}

Groups decoder_groups(const CodecConfig& c, std::size_t i, bool grown) {
  const std::size_t custom = grown ? c.custom_filters : 0;
  const bool last = i + 1 == c.layers;
  return {c.shared_filters, custom, last ? kImageChannels : c.shared_filters, last ? 0 : custom};
}

template <typename T>
Tensor<T> maybe(Shape shape, T fill) {
  return shape_size(shape) == 0 ? Tensor<T>() : Tensor<T>(std::move(shape), fill);
}

template <typename T>
Tensor<T> maybe_normal(Shape shape, double stddev, Rng& rng) {
  return shape_size(shape) == 0 ? Tensor<T>() : trunc_normal<T>(std::move(shape), stddev, rng);
}

double conv_std(const CodecConfig& c, std::size_t fan_in) {
  return std::sqrt(1.0 / static_cast<double>(c.kernel * c.kernel * fan_in));
}

template <typename T>
GdnParams<Tensor<T>> shared_gdn(std::size_t channels) {
  GdnParams<Tensor<T>> g;
  g.beta.s = Tensor<T>({channels}, T(1));
  g.gamma.ss = Tensor<T>({channels, channels});
  for (std::size_t i = 0; i < channels; ++i) g.gamma.ss[i * channels + i] = T(0.1);
  return g;
}

template <typename T>
void grow_gdn(GdnParams<Tensor<T>>& g, std::size_t s, std::size_t c) {
  g.beta.c = maybe<T>({c}, T(1));
  g.gamma.sc = maybe<T>({s, c}, T(0));
  g.gamma.cs = maybe<T>({c, s}, T(0));
  g.gamma.cc = maybe<T>({c, c}, T(0));
}

template <typename T>
ChannelAffine<Tensor<T>> identity_affine(std::size_t s, std::size_t c) {
  ChannelAffine<Tensor<T>> a;
  a.alpha.s = Tensor<T>({s}, T(1));
  a.alpha.c = maybe<T>({c}, T(1));
  a.beta_aff.s = Tensor<T>({s}, T(0));
  a.beta_aff.c = maybe<T>({c}, T(0));
  return a;
}

template <typename T>
ad::Var assemble(ad::Tape<T>& tape, const BlockMatrix<ad::Var>& m, int use_version) {
  if (use_version == 1 || (!m.sc.valid() && !m.cs.valid() && !m.cc.valid())) return m.ss;
  ad::Var top = m.sc.valid() ? ad::concat(tape, {m.ss, m.sc}, 1) : m.ss;
  if (!m.cs.valid()) {
    if (m.cc.valid()) throw ContractError("block matrix has a custom-custom block but no custom-shared block");
    return top;
  }
  ad::Var bottom = m.cc.valid() ? ad::concat(tape, {m.cs, m.cc}, 1) : m.cs;
  return ad::concat(tape, {top, bottom}, 0);
}

template <typename T>
ad::Var assemble(ad::Tape<T>& tape, const BlockVector<ad::Var>& v, int use_version) {
  if (use_version == 1 || !v.c.valid()) return v.s;
  return ad::concat(tape, {v.s, v.c}, 0);
}

void push_float(Fnv1a& h, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  const std::byte bytes[4] = {std::byte(bits & 0xFF), std::byte((bits >> 8) & 0xFF),
                              std::byte((bits >> 16) & 0xFF), std::byte(bits >> 24)};
  h.update(bytes);
}

}  // namespace

using ad::Var;

template <typename T>
CodecModel<T> make_model(const CodecConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  CodecModel<T> m;
  m.config = config;
  m.version = 1;
  const std::size_t L = config.layers, k = config.kernel;
  auto& p = m.params;
  for (std::size_t i = 0; i < L; ++i) {
    const Groups g = encoder_groups(config, i, false);
    ConvParams<Tensor<T>> conv;
    conv.weight.ss = trunc_normal<T>({g.out_s, g.in_s, k, k}, conv_std(config, g.in_s), rng);
    conv.bias.s = Tensor<T>({g.out_s});
    p.encoder_convs.push_back(std::move(conv));
    if (i + 1 < L) p.encoder_gdn.push_back(shared_gdn<T>(g.out_s));
  }
  for (std::size_t i = 0; i < L; ++i) {
    const Groups g = decoder_groups(config, i, false);
    ConvParams<Tensor<T>> conv;
    conv.weight.ss = trunc_normal<T>({g.in_s, g.out_s, k, k}, conv_std(config, g.in_s), rng);
    // Last layer starts at mid-gray so early training is not spent on the DC level.
    conv.bias.s = Tensor<T>({g.out_s}, i + 1 == L ? T(0.5) : T(0));
    p.decoder_convs.push_back(std::move(conv));
    if (i + 1 < L) p.decoder_igdn.push_back(shared_gdn<T>(g.out_s));
  }
  p.entropy.push_back(make_density<T>(config.shared_filters, rng, config.density_widths));
  m.tables.resize(1);
  refresh_hash(m);
  return m;
}

template <typename T>
CodecModel<T> grow_cawf(const CodecModel<T>& parent, std::uint64_t seed) {
  if (parent.version != 1) throw VersionError("grow_cawf needs a version-1 parent");
  const CodecConfig& config = parent.config;
  Rng rng(seed);
  CodecModel<T> m = parent;
  m.version = 2;
  const std::size_t L = config.layers, k = config.kernel;
  auto& p = m.params;
  for (std::size_t i = 0; i < L; ++i) {
    const Groups g = encoder_groups(config, i, true);
    const double sd = conv_std(config, g.in_s + g.in_c);
    auto& w = p.encoder_convs[i].weight;
    w.sc = maybe_normal<T>({g.out_s, g.in_c, k, k}, sd, rng);
    w.cs = maybe_normal<T>({g.out_c, g.in_s, k, k}, sd, rng);
    w.cc = maybe_normal<T>({g.out_c, g.in_c, k, k}, sd, rng);
    p.encoder_convs[i].bias.c = maybe<T>({g.out_c}, T(0));
    if (i + 1 < L) grow_gdn(p.encoder_gdn[i], g.out_s, g.out_c);
    if (parent.has_affine()) {
      auto a = identity_affine<T>(g.out_s, g.out_c);
      a.alpha.s = parent.params.encoder_affine[i].alpha.s;
      a.beta_aff.s = parent.params.encoder_affine[i].beta_aff.s;
      p.encoder_affine[i] = std::move(a);
    }
  }
  for (std::size_t i = 0; i < L; ++i) {
    const Groups g = decoder_groups(config, i, true);
    const double sd = conv_std(config, g.in_s + g.in_c);
    auto& w = p.decoder_convs[i].weight;
    w.sc = maybe_normal<T>({g.in_s, g.out_c, k, k}, sd, rng);
    w.cs = maybe_normal<T>({g.in_c, g.out_s, k, k}, sd, rng);
    w.cc = maybe_normal<T>({g.in_c, g.out_c, k, k}, sd, rng);
    p.decoder_convs[i].bias.c = maybe<T>({g.out_c}, T(0));
    if (i + 1 < L) {
      grow_gdn(p.decoder_igdn[i], g.out_s, g.out_c);
      if (parent.has_affine()) {
        auto a = identity_affine<T>(g.out_s, g.out_c);
        a.alpha.s = parent.params.decoder_affine[i].alpha.s;
        a.beta_aff.s = parent.params.decoder_affine[i].beta_aff.s;
        p.decoder_affine[i] = std::move(a);
      }
    }
  }
  p.entropy.push_back(
      make_density<T>(config.shared_filters + config.custom_filters, rng, config.density_widths));
  m.tables.resize(2);
  m.tables[1] = PmfTable{};
  return m;
}

template <typename T>
CodecModel<T> slice_v1(const CodecModel<T>& model) {
  if (model.version != 2) throw VersionError("slice_v1 needs a version-2 model");
  CodecModel<T> out;
  out.config = model.config;
  out.version = 1;
  out.params = skeleton_like<Tensor<T>>(model.params);
  walk_params(
      [](const ParamInfo& info, const Tensor<T>& src, Tensor<T>& dst) {
        if (info.tag == Tag::shared) dst = src;
      },
      model.params, out.params);
  out.params.entropy.resize(1);
  out.tables = {model.tables.at(0)};
  out.model_hash = model.model_hash;
  return out;
}

template <typename T>
CodecModel<T> insert_affine(const CodecModel<T>& model) {
  if (model.has_affine()) throw ContractError("model already has channel affine layers");
  CodecModel<T> m = model;
  const bool grown = model.version == 2;
  for (std::size_t i = 0; i < model.config.layers; ++i) {
    const Groups g = encoder_groups(model.config, i, grown);
    m.params.encoder_affine.push_back(identity_affine<T>(g.out_s, g.out_c));
  }
  for (std::size_t i = 0; i + 1 < model.config.layers; ++i) {
    const Groups g = decoder_groups(model.config, i, grown);
    m.params.decoder_affine.push_back(identity_affine<T>(g.out_s, g.out_c));
  }
  refresh_hash(m);
  return m;
}

template <typename T>
std::size_t param_count(const CodecModel<T>& model, Part part) {
  std::size_t n = 0;
  walk_params(
      [&](const ParamInfo& info, const Tensor<T>& t) {
        if (info.part == part) n += t.empty() ? 0 : t.size();
      },
      model.params);
  return n;
}

template <typename T>
std::size_t param_count(const CodecModel<T>& model) {
  return param_count(model, Part::encoder) + param_count(model, Part::decoder) +
         param_count(model, Part::entropy);
}

template <typename T>
std::uint64_t compute_model_hash(const CodecModel<T>& model) {
  Fnv1a h;
  walk_params(
      [&](const ParamInfo& info, const Tensor<T>& t) {
        if (info.tag != Tag::shared || !present(t)) return;
        for (std::size_t i = 0; i < t.size(); ++i) push_float(h, static_cast<float>(t[i]));
      },
      model.params);
  return h.digest();
}

template <typename T>
void refresh_hash(CodecModel<T>& model) {
  model.model_hash = compute_model_hash(model);
}

template <typename T>
void freeze_model_tables(CodecModel<T>& model, double tail_mass) {
  model.tables.resize(static_cast<std::size_t>(model.version));
  for (int v = 0; v < model.version; ++v) {
    model.tables[static_cast<std::size_t>(v)] = freeze_tables(model.params.entropy[static_cast<std::size_t>(v)], tail_mass);
  }
}

template <typename T>
bool bitwise_equal(const CodecModel<T>& a, const CodecModel<T>& b) {
  if (!(a.config == b.config) || a.version != b.version || a.model_hash != b.model_hash ||
      a.tables != b.tables || a.has_affine() != b.has_affine() ||
      a.params.entropy.size() != b.params.entropy.size()) {
    return false;
  }
  bool equal = true;
  walk_params([&](const ParamInfo&, const Tensor<T>& x, const Tensor<T>& y) { equal = equal && bitwise_equal(x, y); },
              a.params, b.params);
  return equal;
}

template <typename T>
void project_gdn(Tensor<T>& tensor, Role role) {
  if (role == Role::gdn_beta) {
    for (auto& v : tensor.values()) v = std::max(v, T(kGdnBetaMin));
  } else if (role == Role::gdn_gamma) {
    for (auto& v : tensor.values()) v = std::max(v, T(0));
  }
}

template <typename T>
Var encode_latent(ad::Tape<T>& tape, const NetParams<Var>& p, const CodecConfig& config, Var x,
                  int use_version) {
  const Tensor<T>& xv = tape.value(x);
  const std::size_t f = config.downsampling();
  require_shape(xv.rank() == 3 && xv.dim(0) == kImageChannels,
                "encode_latent: expected [3, H, W], got " + shape_string(xv.shape()));
  require_shape(xv.dim(1) > 0 && xv.dim(2) > 0 && xv.dim(1) % f == 0 && xv.dim(2) % f == 0,
                "encode_latent: H and W must be positive multiples of " + std::to_string(f) + ", got " +
                    shape_string(xv.shape()));
  const int stride = static_cast<int>(config.stride);
  Var h = ad::scale(tape, x, 1.0 / 255.0);
  for (std::size_t i = 0; i < config.layers; ++i) {
    const auto& conv = p.encoder_convs[i];
    h = ad::conv2d(tape, h, assemble(tape, conv.weight, use_version), assemble(tape, conv.bias, use_version),
                   stride);
    if (!p.encoder_affine.empty()) {
      const auto& a = p.encoder_affine[i];
      h = ad::channel_affine(tape, h, assemble(tape, a.alpha, use_version), assemble(tape, a.beta_aff, use_version));
    }
    if (i + 1 < config.layers) {
      const auto& g = p.encoder_gdn[i];
      h = ad::gdn(tape, h, assemble(tape, g.beta, use_version), assemble(tape, g.gamma, use_version));
    }
  }
  return h;
}

template <typename T>
Var decode_latent(ad::Tape<T>& tape, const NetParams<Var>& p, const CodecConfig& config, Var latent,
                  int use_version) {
  const Tensor<T>& zv = tape.value(latent);
  const std::size_t c = config.latent_channels(use_version);
  require_shape(zv.rank() == 3 && zv.dim(0) == c && zv.dim(1) > 0 && zv.dim(2) > 0,
                "decode_latent: expected [" + std::to_string(c) + ", h, w], got " + shape_string(zv.shape()));
  const int stride = static_cast<int>(config.stride);
  Var h = latent;
  for (std::size_t i = 0; i < config.layers; ++i) {
    const auto& conv = p.decoder_convs[i];
    h = ad::conv2d_transpose(tape, h, assemble(tape, conv.weight, use_version),
                             assemble(tape, conv.bias, use_version), stride);
    if (i + 1 < config.layers) {
      if (!p.decoder_affine.empty()) {
        const auto& a = p.decoder_affine[i];
        h = ad::channel_affine(tape, h, assemble(tape, a.alpha, use_version),
                               assemble(tape, a.beta_aff, use_version));
      }
      const auto& g = p.decoder_igdn[i];
      h = ad::igdn(tape, h, assemble(tape, g.beta, use_version), assemble(tape, g.gamma, use_version));
    }
  }
  return ad::scale(tape, h, 255.0);
}

template <typename T>
Tensor<T> encode_latent(const CodecModel<T>& model, const Tensor<T>& x, int use_version) {
  check_version(model.version, use_version);
  ad::Tape<T> tape(false);
  const NetParams<Var> p = bind_constants(tape, model.params);
  return tape.value(encode_latent(tape, p, model.config, tape.constant(x), use_version));
}

template <typename T>
Tensor<T> decode_latent(const CodecModel<T>& model, const Tensor<T>& latent, int use_version) {
  check_version(model.version, use_version);
  ad::Tape<T> tape(false);
  const NetParams<Var> p = bind_constants(tape, model.params);
  return tape.value(decode_latent(tape, p, model.config, tape.constant(latent), use_version));
}

#define NIC_INSTANTIATE(T)                                                                              \
  template CodecModel<T> make_model<T>(const CodecConfig&, std::uint64_t);                              \
  template CodecModel<T> grow_cawf<T>(const CodecModel<T>&, std::uint64_t);                             \
  template CodecModel<T> slice_v1<T>(const CodecModel<T>&);                                             \
  template CodecModel<T> insert_affine<T>(const CodecModel<T>&);                                        \
  template std::size_t param_count<T>(const CodecModel<T>&, Part);                                      \
  template std::size_t param_count<T>(const CodecModel<T>&);                                            \
  template std::uint64_t compute_model_hash<T>(const CodecModel<T>&);                                   \
  template void refresh_hash<T>(CodecModel<T>&);                                                        \
  template void freeze_model_tables<T>(CodecModel<T>&, double);                                         \
  template bool bitwise_equal<T>(const CodecModel<T>&, const CodecModel<T>&);                           \
  template void project_gdn<T>(Tensor<T>&, Role);                                                       \
  template Var encode_latent<T>(ad::Tape<T>&, const NetParams<Var>&, const CodecConfig&, Var, int);     \
  template Var decode_latent<T>(ad::Tape<T>&, const NetParams<Var>&, const CodecConfig&, Var, int);     \
  template Tensor<T> encode_latent<T>(const CodecModel<T>&, const Tensor<T>&, int);                     \
  template Tensor<T> decode_latent<T>(const CodecModel<T>&, const Tensor<T>&, int);

NIC_INSTANTIATE(float)
NIC_INSTANTIATE(double)

}  // namespace nic
