#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "gsvr/geometry.hpp"

namespace gsvr::io {

/// 8-bit grayscale montage of every slice along one axis.
///
/// Tiles are laid out row-major with cols = ceil(sqrt(n)) and
/// rows = ceil(n / cols); unused tiles are black. Within a tile the column
/// index runs along the first remaining axis and the row index along the
/// second (axis z: (x, y); axis y: (x, z); axis x: (y, z)). Intensities are
/// windowed to the 0.5-99.5 percentile range of the masked voxels (all voxels
/// without a mask): p = round(255 * clamp((v - lo) / (hi - lo), 0, 1)). A flat
/// window maps everything to 128.
struct Montage {
  int width = 0, height = 0;
  int cols = 0, rows = 0;
  int tile_width = 0, tile_height = 0;
  double window_lo = 0.0, window_hi = 0.0;
  std::vector<std::uint8_t> pixels;  // row-major, width * height
};

/// axis: 0 = x, 1 = y, 2 = z. Throws InvalidParameter otherwise.
Montage make_montage(const VolumeGrid& grid, int axis);

/// Parses "x", "y" or "z".
int parse_axis(const std::string& name);

void export_slices(const VolumeGrid& grid, int axis, const std::filesystem::path& path);

/// ASCII PLY, one vertex per primitive: x y z, sx sy sz (scale * gamma),
/// qw qx qy qz (unit), intensity.
void export_pointcloud(const GaussianField& field, double gamma, const std::filesystem::path& path);

/// Reads a file written by export_pointcloud back into a field.
GaussianField read_pointcloud(const std::filesystem::path& path);

}  // namespace gsvr::io
