#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "gsvr/geometry.hpp"
#include "gsvr/motion.hpp"

namespace gsvr::io {

/// Linear map applied on read: normalized = (raw - offset) * scale.
struct Normalization {
  double offset = 0.0;
  double scale = 1.0;

  double apply(double raw) const { return (raw - offset) * scale; }
  double invert(double normalized) const { return normalized / scale + offset; }
  bool identity() const { return offset == 0.0 && scale == 1.0; }
};

/// The subset of the 348-byte NIfTI-1 header this reader understands.
struct NiftiHeader {
  std::array<std::int16_t, 8> dim{};
  std::int16_t datatype = 16;
  std::int16_t bitpix = 32;
  std::array<float, 8> pixdim{};
  float vox_offset = 352.0f;
  float scl_slope = 1.0f;
  float scl_inter = 0.0f;
  std::int16_t qform_code = 0;
  std::int16_t sform_code = 0;
  float quatern_b = 0, quatern_c = 0, quatern_d = 0;
  float qoffset_x = 0, qoffset_y = 0, qoffset_z = 0;
  std::array<float, 4> srow_x{}, srow_y{}, srow_z{};
  std::string magic;
  bool swapped = false;

  /// sform when its code is non-zero, else qform, else scaled identity.
  Mat4 affine() const;
};

struct NiftiImage {
  VolumeGrid grid;
  Normalization normalization;
  NiftiHeader header;
};

/// Parses the 348-byte header. Throws UnsupportedFeature for a wrong magic or
/// sizeof_hdr.
NiftiHeader parse_nifti_header(const std::uint8_t* bytes, std::size_t size);

/// Reads a 3D NIfTI-1 (.nii) volume of uint8/int16/float32/float64 voxels.
/// Values are scaled by scl_slope/scl_inter, then (when `normalize`) mapped
/// so the 0.5 and 99.5 percentiles land on 0 and 1.
NiftiImage read_nifti(const std::filesystem::path& path, bool normalize = true);

/// Interprets a NIfTI volume as a slice stack (third axis = slices). The mask
/// comes from `mask_path` when given, else every pixel is used.
SliceStack read_stack(const std::filesystem::path& path, const std::filesystem::path& mask_path = {},
                      Normalization* normalization = nullptr);

/// Writes float32 NIfTI-1 with an sform affine, vox_offset 352 and an empty
/// extension block. When `denormalize` is set, values are mapped back through
/// `normalization` first.
void write_nifti(const VolumeGrid& grid, const std::filesystem::path& path, bool denormalize = false,
                 const Normalization& normalization = {});

/// Writes a stack's data (or its mask, as 0/1) as a volume with the stack affine.
void write_stack(const SliceStack& stack, const std::filesystem::path& path, bool mask_only = false);

/// Writes the grid's mask as a 0/1 float32 volume.
void write_mask(const VolumeGrid& grid, const std::filesystem::path& path);

}  // namespace gsvr::io
