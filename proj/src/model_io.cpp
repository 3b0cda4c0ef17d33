#include "nic/model_io.hpp"

#include "nic/bytes.hpp"

namespace nic {
namespace {

constexpr char kMagic[] = "NICM";

void write_config(ByteWriter& w, const CodecConfig& c) {
  w.u32(static_cast<std::uint32_t>(c.shared_filters));
  w.u32(static_cast<std::uint32_t>(c.custom_filters));
  w.u32(static_cast<std::uint32_t>(c.layers));
  w.u32(static_cast<std::uint32_t>(c.kernel));
  w.u32(static_cast<std::uint32_t>(c.stride));
  w.u8(static_cast<std::uint8_t>(c.lambda_index));
  w.u8(static_cast<std::uint8_t>(c.density_widths.size()));
  for (std::size_t width : c.density_widths) w.u8(static_cast<std::uint8_t>(width));
}

CodecConfig read_config(ByteReader& r) {
  const std::size_t at = r.offset();
  CodecConfig c;
  c.shared_filters = r.u32();
  c.custom_filters = r.u32();
  c.layers = r.u32();
  c.kernel = r.u32();
  c.stride = r.u32();
  c.lambda_index = r.u8();
  c.density_widths.resize(r.u8());
  for (auto& width : c.density_widths) width = r.u8();
  // Bounds keep a corrupted config from allocating an absurd skeleton.
  if (c.shared_filters > 4096 || c.custom_filters > 4096 || c.kernel > 31) r.fail_at("implausible model config", at);
  try {
    c.validate();
  } catch (const Error& e) {
    r.fail_at(std::string("invalid model config: ") + e.what(), at);
  }
  return c;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const CodecModel<float>& model) {
  ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u8(kModelFormatVersion);
  write_config(w, model.config);
  w.u8(static_cast<std::uint8_t>(model.version));
  w.u8(model.has_affine() ? 1 : 0);

  std::uint32_t count = 0;
  walk_params([&](const ParamInfo&, const Tensor<float>& t) { count += present(t) ? 1 : 0; }, model.params);
  w.u32(count);
  walk_params(
      [&](const ParamInfo& info, const Tensor<float>& t) {
        if (!present(t)) return;
        w.u16(static_cast<std::uint16_t>(info.name.size()));
        w.raw(info.name);
        w.u8(static_cast<std::uint8_t>(info.tag));
        w.u8(static_cast<std::uint8_t>(info.part));
        w.u8(static_cast<std::uint8_t>(info.role));
        w.u8(static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (float v : t.values()) w.f32(v);
      },
      model.params);

  w.u8(static_cast<std::uint8_t>(model.tables.size()));
  for (const PmfTable& table : model.tables) {
    w.u32(static_cast<std::uint32_t>(table.size()));
    for (const ChannelPmf& pmf : table.channels) {
      w.i32(pmf.q_min);
      w.i32(pmf.q_max);
      for (std::uint32_t f : pmf.freq) w.u32(f);
    }
  }
  w.u64(model.model_hash);
  return std::move(w.bytes());
}

CodecModel<float> parse_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.text(4) != std::string_view(kMagic, 4)) r.fail_at("bad magic, not a model file", 0);
  const std::uint8_t format = r.u8();
  if (format != kModelFormatVersion) r.fail_at("unsupported model format version " + std::to_string(format), 4);
  const CodecConfig config = read_config(r);
  const std::size_t version_at = r.offset();
  const int version = r.u8();
  const int affine = r.u8();
  if (version < 1 || version > 2 || affine > 1) r.fail_at("bad model version/affine flags", version_at);

  CodecModel<float> m = make_model<float>(config, 0);
  if (version == 2) m = grow_cawf(m, 0);
  if (affine) m = insert_affine(m);

  std::uint32_t expected = 0;
  walk_params([&](const ParamInfo&, const Tensor<float>& t) { expected += present(t) ? 1 : 0; }, m.params);
  const std::size_t count_at = r.offset();
  if (r.u32() != expected) r.fail_at("parameter count does not match the model layout", count_at);
  walk_params(
      [&](const ParamInfo& info, Tensor<float>& t) {
        if (!present(t)) return;
        const std::size_t at = r.offset();
        const std::string name = r.text(r.u16());
        const auto tag = r.u8(), part = r.u8(), role = r.u8();
        if (name != info.name || tag != static_cast<std::uint8_t>(info.tag) ||
            part != static_cast<std::uint8_t>(info.part) || role != static_cast<std::uint8_t>(info.role)) {
          r.fail_at("unexpected parameter record '" + name + "', expected '" + info.name + "'", at);
        }
        Shape shape(r.u8());
        for (auto& d : shape) d = r.u32();
        if (shape != t.shape()) {
          r.fail_at("parameter " + name + " has shape " + shape_string(shape) + ", expected " +
                        shape_string(t.shape()),
                    at);
        }
        for (auto& v : t.values()) v = r.f32();
        if (!t.all_finite()) r.fail_at("parameter " + name + " holds non-finite values", at);
      },
      m.params);

  const std::size_t tables_at = r.offset();
  if (r.u8() != static_cast<std::size_t>(version)) r.fail_at("table count does not match model version", tables_at);
  m.tables.assign(static_cast<std::size_t>(version), PmfTable{});
  for (int v = 0; v < version; ++v) {
    const std::size_t at = r.offset();
    const std::uint32_t channels = r.u32();
    if (channels != 0 && channels != config.latent_channels(v + 1)) r.fail_at("table channel count mismatch", at);
    for (std::uint32_t c = 0; c < channels; ++c) {
      const std::size_t pmf_at = r.offset();
      const std::int32_t lo = r.i32(), hi = r.i32();
      if (lo > hi || lo < -kMaxSupportMagnitude || hi > kMaxSupportMagnitude) r.fail_at("bad PMF support", pmf_at);
      std::vector<std::uint32_t> freq(static_cast<std::size_t>(hi - lo + 1));
      for (auto& f : freq) f = r.u32();
      try {
        m.tables[static_cast<std::size_t>(v)].channels.emplace_back(lo, hi, std::move(freq));
      } catch (const Error& e) {
        r.fail_at(std::string("bad PMF: ") + e.what(), pmf_at);
      }
    }
  }
  const std::size_t hash_at = r.offset();
  m.model_hash = r.u64();
  if (m.model_hash != compute_model_hash(m)) r.fail_at("stored hash does not match the shared parameters", hash_at);
  if (r.remaining() != 0) r.fail("trailing bytes after model");
  return m;
}

void save_model(const CodecModel<float>& model, const std::string& path) {
  write_file(path, serialize_model(model));
}

CodecModel<float> load_model(const std::string& path) { return parse_model(read_file(path)); }

}  // namespace nic
