#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "gsvr/geometry.hpp"

namespace gsvr::io {

inline constexpr std::uint32_t kFieldFormatVersion = 1;

/// Native primitive format, little-endian:
///   "GSVR" | u32 version | u64 N | means f32[3N] | log_scales f32[3N]
///   | quaternions f32[4N] | intensities f32[N]
std::vector<std::uint8_t> encode_field(const GaussianField& field);
GaussianField decode_field(const std::vector<std::uint8_t>& bytes);

void write_field(const GaussianField& field, const std::filesystem::path& path);
GaussianField read_field(const std::filesystem::path& path);

}  // namespace gsvr::io
