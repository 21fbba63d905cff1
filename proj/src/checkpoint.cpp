#include "chvit/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "chvit/binary_io.hpp"
#include "chvit/errors.hpp"

namespace chvit {

namespace binary {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("file not found or unreadable: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, std::string_view bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace binary

namespace {

constexpr std::string_view kMagic = "CHVT";

}  // namespace

std::string encode_checkpoint(const ModelParams& params) {
  const ModelConfig& c = params.config();
  binary::Writer w;
  w.raw(kMagic);
  w.u16(kCheckpointVersion);
  for (std::size_t v : {c.image_h, c.image_w, c.patch_size, c.channels, c.embed_dim, c.depth,
                        c.heads, c.mlp_hidden, c.num_classes}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.u8(static_cast<std::uint8_t>(c.variant));
  w.u32(static_cast<std::uint32_t>(params.all().size()));
  for (const Parameter& p : params.all()) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p.value.data) w.f32(static_cast<float>(v));
  }
  return w.take();
}

ModelParams decode_checkpoint(std::string_view bytes) {
  binary::Reader r(bytes, "checkpoint");
  if (r.raw(4) != kMagic) throw FormatError("checkpoint: bad magic (expected CHVT)");
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  ModelConfig c;
  for (std::size_t* field : {&c.image_h, &c.image_w, &c.patch_size, &c.channels, &c.embed_dim,
                             &c.depth, &c.heads, &c.mlp_hidden, &c.num_classes}) {
    *field = r.u32();
  }
  const std::uint8_t tag = r.u8();
  if (tag > static_cast<std::uint8_t>(Variant::multivit)) {
    throw FormatError("checkpoint: unknown variant tag " + std::to_string(tag));
  }
  c.variant = static_cast<Variant>(tag);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid config: ") + e.what());
  }

  // Build the expected layout, then overwrite every value by name.
  Rng scratch(0);
  ModelConfig layout = c;
  if (layout.variant == Variant::channelvit_shared_chn) layout.variant = Variant::channelvit_tied;
  ModelParams params = init_params(layout, scratch);
  params.set_variant(c.variant);

  const std::uint32_t count = r.u32();
  if (count != params.all().size()) {
    throw FormatError("checkpoint: " + std::to_string(count) + " parameters, layout expects " +
                      std::to_string(params.all().size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    Parameter* p = params.find(name);
    if (!p) throw FormatError("checkpoint: unexpected parameter " + name);
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    if (shape != p->value.shape) {
      throw FormatError("checkpoint: parameter " + name + " has shape " + shape_str(shape) +
                        ", layout expects " + shape_str(p->value.shape));
    }
    r.need(4 * p->value.size());
    for (double& v : p->value.data) v = static_cast<double>(r.f32());
  }
  if (r.remaining() != 0) {
    throw FormatError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes");
  }
  return params;
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  binary::write_file_atomic(path, encode_checkpoint(params));
}

ModelParams load_checkpoint(const std::string& path) {
  return decode_checkpoint(binary::read_file(path));
}

}  // namespace chvit
