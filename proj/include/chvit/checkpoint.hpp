#pragma once

#include <cstdint>
#include <string>

#include "chvit/model.hpp"

namespace chvit {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// "CHVT", u16 version, the ModelConfig as u32 fields plus a u8 variant tag, then
/// every parameter as (name, rank, dims, f32 values). All little-endian.
std::string encode_checkpoint(const ModelParams& params);
ModelParams decode_checkpoint(std::string_view bytes);

void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace chvit
