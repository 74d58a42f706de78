#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sqac/model/quality_model.hpp"

namespace sqac::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Little-endian layout:
//   "SQAC", u32 version, u32 len + architecture descriptor,
//   u32 count, per tensor: u32 len + name, u32 rank, u64 extents, f32 data,
//   u32 count, per mask: u32 len + name, u64 bits, LSB-first packed bytes,
//   f32 universal scale, f32 universal shift,
//   u32 count, per dataset: u32 len + id, f32 scale, f32 shift,
//   u32 CRC-32 of every preceding byte.
// Encoding is canonical, so load followed by save reproduces the bytes.
std::vector<std::uint8_t> serialize(const QualityModel& model);
QualityModel deserialize(const std::vector<std::uint8_t>& bytes);  // throws FormatError

// Written to a temporary sibling and renamed into place.
void save_checkpoint(const QualityModel& model, const std::filesystem::path& path);
QualityModel load_checkpoint(const std::filesystem::path& path);  // IoError / FormatError

}  // namespace sqac::model
