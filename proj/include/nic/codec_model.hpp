#pragma once

// Feature autoencoder with GDN/IGDN, shared/custom parameter partition and
// version routing.
//
// Every conv, GDN and affine parameter is stored as blocks split along its
// channel axes into a shared part (the version-1 codec) and custom parts
// added by grow_cawf:
//
//   BlockMatrix  ss | sc        rows = axis 0 group, cols = axis 1 group
//                ---+---        (conv weight [out, in], transposed conv
//                cs | cc         weight [in, out], GDN gamma [out, in])
//
// Only ss and the shared halves of vectors are tagged shared. Routing with
// use_version = 1 reads nothing but shared blocks, so a grown model
// reproduces its parent bit for bit; use_version = 2 concatenates the blocks
// into full-width layers.

#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "nic/autodiff.hpp"
#include "nic/entropy_model.hpp"
#include "nic/random.hpp"
#include "nic/tensor.hpp"

namespace nic {

inline constexpr std::size_t kImageChannels = 3;

enum class Tag : std::uint8_t { shared = 0, custom = 1 };
enum class Part : std::uint8_t { encoder = 0, decoder = 1, entropy = 2 };
enum class Role : std::uint8_t {
  conv_weight = 0,
  conv_bias = 1,
  gdn_beta = 2,
  gdn_gamma = 3,
  affine_scale = 4,
  affine_shift = 5,
  density = 6,
};

struct CodecConfig {
  std::size_t shared_filters = 64;
  std::size_t custom_filters = 16;
  std::size_t layers = 4;
  std::size_t kernel = 5;
  std::size_t stride = 2;
  int lambda_index = 1;
  std::vector<std::size_t> density_widths = kDefaultDensityWidths;

  void validate() const;
  // Spatial reduction factor between image and latent (stride^layers).
  std::size_t downsampling() const;
  std::size_t latent_channels(int use_version) const {
    return use_version >= 2 ? shared_filters + custom_filters : shared_filters;
  }
  friend bool operator==(const CodecConfig&, const CodecConfig&) = default;
};

template <typename P>
struct BlockMatrix {
  P ss, sc, cs, cc;
};

template <typename P>
struct BlockVector {
  P s, c;
};

template <typename P>
struct ConvParams {
  BlockMatrix<P> weight;
  BlockVector<P> bias;
};

template <typename P>
struct GdnParams {
  BlockVector<P> beta;
  BlockMatrix<P> gamma;
};

template <typename P>
struct ChannelAffine {
  BlockVector<P> alpha;     // per-channel scale
  BlockVector<P> beta_aff;  // per-channel offset
};

template <typename P>
struct NetParams {
  std::vector<ConvParams<P>> encoder_convs;     // layers
  std::vector<GdnParams<P>> encoder_gdn;        // layers - 1
  std::vector<ChannelAffine<P>> encoder_affine; // layers, or empty
  std::vector<ConvParams<P>> decoder_convs;     // layers (transposed)
  std::vector<GdnParams<P>> decoder_igdn;       // layers - 1
  std::vector<ChannelAffine<P>> decoder_affine; // layers - 1, or empty
  std::vector<DensityParams<P>> entropy;        // one per version
};

struct ParamInfo {
  std::string name;
  Tag tag;
  Part part;
  Role role;
};

inline bool present(const ad::Var& v) { return v.valid(); }
template <typename T>
bool present(const Tensor<T>& t) {
  return !t.empty();
}

// Calls f(info, slot...) for every parameter slot, in the canonical order
// used by hashing and the model file, walking several structurally identical
// NetParams in lockstep. Absent blocks (empty tensor / invalid var) are
// visited too; use present() to skip them.
template <typename F, typename Net, typename... Nets>
void walk_params(F&& f, Net& net, Nets&... nets);

// Copies the skeleton (vector sizes) of a NetParams with default slots.
template <typename Q, typename P>
NetParams<Q> skeleton_like(const NetParams<P>& net);

template <typename T>
struct CodecModel {
  CodecConfig config;
  int version = 1;
  NetParams<Tensor<T>> params;
  std::vector<PmfTable> tables;  // one per version; empty until frozen
  std::uint64_t model_hash = 0;  // FNV-1a of the shared slice

  bool has_affine() const { return !params.encoder_affine.empty(); }

  template <typename U>
  CodecModel<U> cast() const;
};

// Fresh version-1 model.
template <typename T>
CodecModel<T> make_model(const CodecConfig& config, std::uint64_t seed);

// Version-2 model: parent blocks become the frozen shared slice, every layer
// gains config.custom_filters custom channels, and a second entropy model over
// the full latent is added.
template <typename T>
CodecModel<T> grow_cawf(const CodecModel<T>& parent, std::uint64_t seed);

// Standalone version-1 model made of the shared slice of a version-2 model.
template <typename T>
CodecModel<T> slice_v1(const CodecModel<T>& model);

// Adds per-channel affine layers initialized to identity.
template <typename T>
CodecModel<T> insert_affine(const CodecModel<T>& model);

template <typename T>
std::size_t param_count(const CodecModel<T>& model, Part part);

template <typename T>
std::size_t param_count(const CodecModel<T>& model);

template <typename T>
std::uint64_t compute_model_hash(const CodecModel<T>& model);
template <typename T>
void refresh_hash(CodecModel<T>& model);

// Recomputes the integer PMF tables of every version from its entropy model.
template <typename T>
void freeze_model_tables(CodecModel<T>& model, double tail_mass = kDefaultTailMass);

// Bitwise equality of everything a model file stores.
template <typename T>
bool bitwise_equal(const CodecModel<T>& a, const CodecModel<T>& b);

// Clamps GDN parameters into their domain: beta >= 1e-6, gamma >= 0.
template <typename T>
void project_gdn(Tensor<T>& tensor, Role role);

inline constexpr double kGdnBetaMin = 1e-6;

// Binds every parameter to the tape; params for which trainable(info) holds
// become differentiable leaves, the others constants.
template <typename T, typename Pred>
NetParams<ad::Var> bind_params(ad::Tape<T>& tape, const NetParams<Tensor<T>>& params, Pred&& trainable);

template <typename T>
NetParams<ad::Var> bind_constants(ad::Tape<T>& tape, const NetParams<Tensor<T>>& params);

// Tape-level transforms. x is [3, H, W] in 0..255 intensity units with H, W
// multiples of config.downsampling(); the decoder output uses the same units.
template <typename T>
ad::Var encode_latent(ad::Tape<T>& tape, const NetParams<ad::Var>& params, const CodecConfig& config,
                      ad::Var x, int use_version);

template <typename T>
ad::Var decode_latent(ad::Tape<T>& tape, const NetParams<ad::Var>& params, const CodecConfig& config,
                      ad::Var latent, int use_version);

template <typename T>
Tensor<T> encode_latent(const CodecModel<T>& model, const Tensor<T>& x, int use_version);

template <typename T>
Tensor<T> decode_latent(const CodecModel<T>& model, const Tensor<T>& latent, int use_version);

void check_version(int model_version, int use_version);

// ---------------------------------------------------------------------------

namespace detail {

template <typename F, typename... M>
void walk_matrix(F& f, const std::string& prefix, Part part, Role role, M&... m) {
  f(ParamInfo{prefix + ".ss", Tag::shared, part, role}, m.ss...);
  f(ParamInfo{prefix + ".sc", Tag::custom, part, role}, m.sc...);
  f(ParamInfo{prefix + ".cs", Tag::custom, part, role}, m.cs...);
  f(ParamInfo{prefix + ".cc", Tag::custom, part, role}, m.cc...);
}

template <typename F, typename... V>
void walk_vector(F& f, const std::string& prefix, Part part, Role role, V&... v) {
  f(ParamInfo{prefix + ".s", Tag::shared, part, role}, v.s...);
  f(ParamInfo{prefix + ".c", Tag::custom, part, role}, v.c...);
}

template <typename F, typename... C>
void walk_convs(F& f, const std::string& prefix, Part part, std::size_t n, C&... convs) {
  for (std::size_t i = 0; i < n; ++i) {
    const std::string name = prefix + std::to_string(i);
    walk_matrix(f, name + ".weight", part, Role::conv_weight, convs[i].weight...);
    walk_vector(f, name + ".bias", part, Role::conv_bias, convs[i].bias...);
  }
}

template <typename F, typename... G>
void walk_gdn(F& f, const std::string& prefix, Part part, std::size_t n, G&... gdn) {
  for (std::size_t i = 0; i < n; ++i) {
    const std::string name = prefix + std::to_string(i);
    walk_vector(f, name + ".beta", part, Role::gdn_beta, gdn[i].beta...);
    walk_matrix(f, name + ".gamma", part, Role::gdn_gamma, gdn[i].gamma...);
  }
}

template <typename F, typename... A>
void walk_affine(F& f, const std::string& prefix, Part part, std::size_t n, A&... affine) {
  for (std::size_t i = 0; i < n; ++i) {
    const std::string name = prefix + std::to_string(i);
    walk_vector(f, name + ".alpha", part, Role::affine_scale, affine[i].alpha...);
    walk_vector(f, name + ".beta_aff", part, Role::affine_shift, affine[i].beta_aff...);
  }
}

template <typename F, typename... D>
void walk_density(F& f, const std::string& prefix, Tag tag, D&... d) {
  auto& first = std::get<0>(std::tie(d...));
  for (std::size_t k = 0; k < first.matrices.size(); ++k) {
    f(ParamInfo{prefix + ".matrix" + std::to_string(k), tag, Part::entropy, Role::density}, d.matrices[k]...);
  }
  for (std::size_t k = 0; k < first.biases.size(); ++k) {
    f(ParamInfo{prefix + ".bias" + std::to_string(k), tag, Part::entropy, Role::density}, d.biases[k]...);
  }
  for (std::size_t k = 0; k < first.factors.size(); ++k) {
    f(ParamInfo{prefix + ".factor" + std::to_string(k), tag, Part::entropy, Role::density}, d.factors[k]...);
  }
}

}  // namespace detail

template <typename F, typename Net, typename... Nets>
void walk_params(F&& f, Net& net, Nets&... nets) {
  detail::walk_convs(f, "enc.conv", Part::encoder, net.encoder_convs.size(), net.encoder_convs,
                     nets.encoder_convs...);
  detail::walk_gdn(f, "enc.gdn", Part::encoder, net.encoder_gdn.size(), net.encoder_gdn, nets.encoder_gdn...);
  detail::walk_affine(f, "enc.affine", Part::encoder, net.encoder_affine.size(), net.encoder_affine,
                      nets.encoder_affine...);
  detail::walk_convs(f, "dec.conv", Part::decoder, net.decoder_convs.size(), net.decoder_convs,
                     nets.decoder_convs...);
  detail::walk_gdn(f, "dec.igdn", Part::decoder, net.decoder_igdn.size(), net.decoder_igdn,
                   nets.decoder_igdn...);
  detail::walk_affine(f, "dec.affine", Part::decoder, net.decoder_affine.size(), net.decoder_affine,
                      nets.decoder_affine...);
  for (std::size_t v = 0; v < net.entropy.size(); ++v) {
    detail::walk_density(f, "entropy" + std::to_string(v + 1), v == 0 ? Tag::shared : Tag::custom,
                         net.entropy[v], nets.entropy[v]...);
  }
}

template <typename Q, typename P>
NetParams<Q> skeleton_like(const NetParams<P>& net) {
  NetParams<Q> out;
  out.encoder_convs.resize(net.encoder_convs.size());
  out.encoder_gdn.resize(net.encoder_gdn.size());
  out.encoder_affine.resize(net.encoder_affine.size());
  out.decoder_convs.resize(net.decoder_convs.size());
  out.decoder_igdn.resize(net.decoder_igdn.size());
  out.decoder_affine.resize(net.decoder_affine.size());
  out.entropy.resize(net.entropy.size());
  for (std::size_t v = 0; v < net.entropy.size(); ++v) {
    out.entropy[v].matrices.resize(net.entropy[v].matrices.size());
    out.entropy[v].biases.resize(net.entropy[v].biases.size());
    out.entropy[v].factors.resize(net.entropy[v].factors.size());
  }
  return out;
}

template <typename T, typename Pred>
NetParams<ad::Var> bind_params(ad::Tape<T>& tape, const NetParams<Tensor<T>>& params, Pred&& trainable) {
  NetParams<ad::Var> vars = skeleton_like<ad::Var>(params);
  walk_params(
      [&](const ParamInfo& info, const Tensor<T>& value, ad::Var& var) {
        if (!present(value)) return;
        var = trainable(info) ? tape.parameter(value) : tape.constant(value);
      },
      params, vars);
  return vars;
}

template <typename T>
NetParams<ad::Var> bind_constants(ad::Tape<T>& tape, const NetParams<Tensor<T>>& params) {
  return bind_params(tape, params, [](const ParamInfo&) { return false; });
}

template <typename T>
template <typename U>
CodecModel<U> CodecModel<T>::cast() const {
  CodecModel<U> out;
  out.config = config;
  out.version = version;
  out.tables = tables;
  out.model_hash = model_hash;
  out.params = skeleton_like<Tensor<U>>(params);
  walk_params(
      [](const ParamInfo&, const Tensor<T>& src, Tensor<U>& dst) {
        if (present(src)) dst = src.template cast<U>();
      },
      params, out.params);
  return out;
}

}  // namespace nic
