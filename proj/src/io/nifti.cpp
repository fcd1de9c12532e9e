#include "gsvr/io/nifti.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace gsvr::io {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

enum : std::int16_t { kUint8 = 2, kInt16 = 4, kFloat32 = 16, kFloat64 = 64 };

template <typename T>
T byteswap_value(T v) {
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  std::reverse(b, b + sizeof(T));
  std::memcpy(&v, b, sizeof(T));
  return v;
}

template <typename T>
T read_at(const std::uint8_t* bytes, std::size_t offset, bool swapped) {
  T v;
  std::memcpy(&v, bytes + offset, sizeof(T));
  return swapped ? byteswap_value(v) : v;
}

template <typename T>
void write_at(std::vector<std::uint8_t>& out, std::size_t offset, T v) {
  static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");
  std::memcpy(out.data() + offset, &v, sizeof(T));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Normalization percentile_normalization(const std::vector<double>& values) {
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const auto at = [&](double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  const double lo = at(0.005), hi = at(0.995);
  Normalization n;
  n.offset = lo;
  n.scale = hi > lo ? 1.0 / (hi - lo) : 1.0;
  return n;
}

}  // namespace

Mat4 NiftiHeader::affine() const {
  Mat4 a = Mat4::Identity();
  if (sform_code > 0) {
    for (int c = 0; c < 4; ++c) {
      a(0, c) = srow_x[static_cast<std::size_t>(c)];
      a(1, c) = srow_y[static_cast<std::size_t>(c)];
      a(2, c) = srow_z[static_cast<std::size_t>(c)];
    }
    return a;
  }
  const double dx = pixdim[1] > 0 ? pixdim[1] : 1.0;
  const double dy = pixdim[2] > 0 ? pixdim[2] : 1.0;
  const double dz = pixdim[3] > 0 ? pixdim[3] : 1.0;
  if (qform_code > 0) {
    const double b = quatern_b, c = quatern_c, d = quatern_d;
    const double a0 = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
    Mat3 r;
    r << a0 * a0 + b * b - c * c - d * d, 2 * (b * c - a0 * d), 2 * (b * d + a0 * c),
         2 * (b * c + a0 * d), a0 * a0 + c * c - b * b - d * d, 2 * (c * d - a0 * b),
         2 * (b * d - a0 * c), 2 * (c * d + a0 * b), a0 * a0 + d * d - c * c - b * b;
    const double qfac = pixdim[0] < 0 ? -1.0 : 1.0;
    a.topLeftCorner<3, 3>() = r * Vec3(dx, dy, qfac * dz).asDiagonal();
    a.block<3, 1>(0, 3) = Vec3(qoffset_x, qoffset_y, qoffset_z);
    return a;
  }
  a.topLeftCorner<3, 3>() = Vec3(dx, dy, dz).asDiagonal();
  return a;
}

NiftiHeader parse_nifti_header(const std::uint8_t* bytes, std::size_t size) {
  if (size < static_cast<std::size_t>(kHeaderSize)) throw UnsupportedFeature("nifti: file shorter than 348-byte header");
  NiftiHeader h;
  const auto sizeof_hdr = read_at<std::int32_t>(bytes, 0, false);
  if (sizeof_hdr == kHeaderSize) {
    h.swapped = false;
  } else if (byteswap_value(sizeof_hdr) == kHeaderSize) {
    h.swapped = true;
  } else {
    throw UnsupportedFeature("nifti: sizeof_hdr is not 348");
  }
  h.magic.assign(reinterpret_cast<const char*>(bytes + 344), 4);
  if (h.magic != std::string("n+1\0", 4) && h.magic != std::string("ni1\0", 4)) {
    throw UnsupportedFeature("nifti: magic must be \"n+1\" or \"ni1\"");
  }
  const bool sw = h.swapped;
  for (std::size_t i = 0; i < 8; ++i) h.dim[i] = read_at<std::int16_t>(bytes, 40 + 2 * i, sw);
  h.datatype = read_at<std::int16_t>(bytes, 70, sw);
  h.bitpix = read_at<std::int16_t>(bytes, 72, sw);
  for (std::size_t i = 0; i < 8; ++i) h.pixdim[i] = read_at<float>(bytes, 76 + 4 * i, sw);
  h.vox_offset = read_at<float>(bytes, 108, sw);
  h.scl_slope = read_at<float>(bytes, 112, sw);
  h.scl_inter = read_at<float>(bytes, 116, sw);
  h.qform_code = read_at<std::int16_t>(bytes, 252, sw);
  h.sform_code = read_at<std::int16_t>(bytes, 254, sw);
  h.quatern_b = read_at<float>(bytes, 256, sw);
  h.quatern_c = read_at<float>(bytes, 260, sw);
  h.quatern_d = read_at<float>(bytes, 264, sw);
  h.qoffset_x = read_at<float>(bytes, 268, sw);
  h.qoffset_y = read_at<float>(bytes, 272, sw);
  h.qoffset_z = read_at<float>(bytes, 276, sw);
  for (std::size_t i = 0; i < 4; ++i) {
    h.srow_x[i] = read_at<float>(bytes, 280 + 4 * i, sw);
    h.srow_y[i] = read_at<float>(bytes, 296 + 4 * i, sw);
    h.srow_z[i] = read_at<float>(bytes, 312 + 4 * i, sw);
  }
  return h;
}

NiftiImage read_nifti(const std::filesystem::path& path, bool normalize) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  NiftiImage img;
  img.header = parse_nifti_header(bytes.data(), bytes.size());
  const NiftiHeader& h = img.header;
  if (h.magic[1] == 'i') throw UnsupportedFeature("nifti: magic \"ni1\" (detached .hdr/.img pair) is not supported");

  const int ndim = h.dim[0];
  if (ndim < 1 || ndim > 7) throw UnsupportedFeature("nifti: dim[0] out of range");
  for (int d = 4; d <= ndim; ++d) {
    if (h.dim[static_cast<std::size_t>(d)] > 1) throw UnsupportedFeature("nifti: dim[" + std::to_string(d) + "] > 1 (only 3D volumes)");
  }
  const int nx = h.dim[1];
  const int ny = ndim >= 2 ? h.dim[2] : 1;
  const int nz = ndim >= 3 ? h.dim[3] : 1;
  if (nx <= 0 || ny <= 0 || nz <= 0) throw UnsupportedFeature("nifti: non-positive dim");

  std::size_t bytes_per = 0;
  switch (h.datatype) {
    case kUint8: bytes_per = 1; break;
    case kInt16: bytes_per = 2; break;
    case kFloat32: bytes_per = 4; break;
    case kFloat64: bytes_per = 8; break;
    default: throw UnsupportedFeature("nifti: datatype " + std::to_string(h.datatype) + " not supported");
  }
  const std::size_t count = static_cast<std::size_t>(nx) * ny * nz;
  const auto offset = static_cast<std::size_t>(h.vox_offset);
  if (h.vox_offset < kHeaderSize || bytes.size() < offset + count * bytes_per) {
    throw IoError("nifti: truncated voxel data in " + path.string());
  }

  const double slope = h.scl_slope == 0.0f || !std::isfinite(h.scl_slope) ? 1.0 : h.scl_slope;
  const double inter = std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;
  std::vector<double> values(count);
  const std::uint8_t* p = bytes.data() + offset;
  for (std::size_t i = 0; i < count; ++i) {
    double raw = 0.0;
    switch (h.datatype) {
      case kUint8: raw = p[i]; break;
      case kInt16: raw = read_at<std::int16_t>(p, 2 * i, h.swapped); break;
      case kFloat32: raw = read_at<float>(p, 4 * i, h.swapped); break;
      case kFloat64: raw = read_at<double>(p, 8 * i, h.swapped); break;
    }
    values[i] = raw * slope + inter;
  }
  if (normalize) img.normalization = percentile_normalization(values);

  img.grid = VolumeGrid(nx, ny, nz, h.affine());
  for (std::size_t i = 0; i < count; ++i) {
    img.grid.data[i] = static_cast<float>(normalize ? img.normalization.apply(values[i]) : values[i]);
  }
  return img;
}

SliceStack read_stack(const std::filesystem::path& path, const std::filesystem::path& mask_path,
                      Normalization* normalization) {
  NiftiImage img = read_nifti(path, true);
  SliceStack s;
  s.nx = img.grid.nx;
  s.ny = img.grid.ny;
  s.n_slices = img.grid.nz;
  s.affine = img.grid.affine;
  const Vec3 spacing = s.affine.topLeftCorner<3, 3>().colwise().norm().transpose();
  s.inplane_spacing = 0.5 * (spacing.x() + spacing.y());
  s.thickness = spacing.z();
  s.data = std::move(img.grid.data);
  if (!mask_path.empty()) {
    const NiftiImage mask = read_nifti(mask_path, false);
    if (mask.grid.nx != s.nx || mask.grid.ny != s.ny || mask.grid.nz != s.n_slices) {
      throw InvalidParameter("read_stack: mask dimensions differ from " + path.string());
    }
    s.mask.resize(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) s.mask[i] = mask.grid.data[i] > 0.5f ? 1 : 0;
  } else {
    s.mask.assign(s.size(), 1);
  }
  if (normalization) *normalization = img.normalization;
  s.validate();
  return s;
}

void write_nifti(const VolumeGrid& grid, const std::filesystem::path& path, bool denormalize,
                 const Normalization& normalization) {
  grid.validate();
  std::vector<std::uint8_t> out(kVoxOffset + 4 * grid.size(), 0);
  write_at<std::int32_t>(out, 0, kHeaderSize);
  const std::int16_t dim[8] = {3, static_cast<std::int16_t>(grid.nx), static_cast<std::int16_t>(grid.ny),
                               static_cast<std::int16_t>(grid.nz), 1, 1, 1, 1};
  for (std::size_t i = 0; i < 8; ++i) write_at<std::int16_t>(out, 40 + 2 * i, dim[i]);
  write_at<std::int16_t>(out, 70, kFloat32);
  write_at<std::int16_t>(out, 72, 32);
  const Vec3 spacing = grid.affine.topLeftCorner<3, 3>().colwise().norm().transpose();
  const float pixdim[8] = {1.0f, static_cast<float>(spacing.x()), static_cast<float>(spacing.y()),
                           static_cast<float>(spacing.z()), 1.0f, 1.0f, 1.0f, 1.0f};
  for (std::size_t i = 0; i < 8; ++i) write_at<float>(out, 76 + 4 * i, pixdim[i]);
  write_at<float>(out, 108, static_cast<float>(kVoxOffset));
  write_at<float>(out, 112, 1.0f);
  write_at<float>(out, 116, 0.0f);
  out[123] = 2;  // xyzt_units: mm
  write_at<std::int16_t>(out, 252, 0);
  write_at<std::int16_t>(out, 254, 2);  // sform_code: aligned anatomical
  for (std::size_t c = 0; c < 4; ++c) {
    write_at<float>(out, 280 + 4 * c, static_cast<float>(grid.affine(0, static_cast<Eigen::Index>(c))));
    write_at<float>(out, 296 + 4 * c, static_cast<float>(grid.affine(1, static_cast<Eigen::Index>(c))));
    write_at<float>(out, 312 + 4 * c, static_cast<float>(grid.affine(2, static_cast<Eigen::Index>(c))));
  }
  std::memcpy(out.data() + 344, "n+1\0", 4);
  // Bytes 348..351: extension flag, all zero.
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const float v = denormalize ? static_cast<float>(normalization.invert(grid.data[i])) : grid.data[i];
    write_at<float>(out, kVoxOffset + 4 * i, v);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

void write_stack(const SliceStack& stack, const std::filesystem::path& path, bool mask_only) {
  VolumeGrid g(stack.nx, stack.ny, stack.n_slices, stack.affine);
  for (std::size_t i = 0; i < stack.size(); ++i) {
    g.data[i] = mask_only ? (stack.mask[i] ? 1.0f : 0.0f) : stack.data[i];
  }
  write_nifti(g, path);
}

void write_mask(const VolumeGrid& grid, const std::filesystem::path& path) {
  VolumeGrid g(grid.nx, grid.ny, grid.nz, grid.affine);
  for (std::size_t i = 0; i < grid.size(); ++i) g.data[i] = grid.in_mask(i) && grid.has_mask() ? 1.0f : 0.0f;
  write_nifti(g, path);
}

}  // namespace gsvr::io
