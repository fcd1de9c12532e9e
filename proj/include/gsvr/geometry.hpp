#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gsvr/types.hpp"

namespace gsvr {

/// Added to the weight sum in the normalized mixture to avoid 0/0.
inline constexpr double kMixtureDelta = 1e-8;
/// Smallest admissible covariance eigenvalue (mm^2).
inline constexpr double kEigenFloor = 1e-6;
/// Largest Mahalanobis half-distance fed to exp(); larger values clamp here.
inline constexpr double kMaxExponent = 80.0;

/// Rotation matrix of the normalized quaternion (w, x, y, z).
/// Throws InvalidParameter for a zero-norm quaternion.
Mat3 quat_to_rotation(const Quat& q);

/// Hamilton product a*b, so that R(a*b) = R(a) R(b).
Quat quat_multiply(const Quat& a, const Quat& b);

/// Unit quaternion for a rotation of `angle` radians about `axis`.
Quat quat_from_axis_angle(const Vec3& axis, double angle);

/// Back-propagates dL/dR through R = quat_to_rotation(q), including the
/// normalization q/|q|, and returns dL/dq.
Quat quat_rotation_backward(const Quat& q, const Mat3& dR);

/// Compact symmetric 3x3 matrix.
struct Sym3 {
  double xx = 0, xy = 0, xz = 0, yy = 0, yz = 0, zz = 0;

  static Sym3 from(const Mat3& m);
  Mat3 full() const;
  double trace() const { return xx + yy + zz; }
  double determinant() const;
  /// Inverse via the adjugate; caller guarantees positive definiteness.
  Sym3 inverse() const;
  /// v^T S v
  double quad(const Vec3& v) const;
  Vec3 apply(const Vec3& v) const;
  Sym3 operator+(const Sym3& o) const;
};

using Covariance3 = Sym3;

/// Sigma = R diag(exp(2 log_s)) R^T.
Covariance3 build_covariance(const Vec3& log_s, const Quat& q);

/// The learnable cloud of anisotropic Gaussian primitives.
///
/// Parameters are stored as flat arrays so the optimizer can treat each
/// parameter class as one contiguous group: means (3N, mm), log_scales
/// (3N, log mm), quaternions (4N, w-first, not necessarily unit) and
/// intensities (N).
struct GaussianField {
  std::vector<double> means;
  std::vector<double> log_scales;
  std::vector<double> quaternions;
  std::vector<double> intensities;

  GaussianField() = default;
  explicit GaussianField(std::size_t n);

  std::size_t count() const { return intensities.size(); }

  Vec3 mean(std::size_t j) const { return {means[3 * j], means[3 * j + 1], means[3 * j + 2]}; }
  Vec3 log_scale(std::size_t j) const {
    return {log_scales[3 * j], log_scales[3 * j + 1], log_scales[3 * j + 2]};
  }
  Quat quaternion(std::size_t j) const {
    return {quaternions[4 * j], quaternions[4 * j + 1], quaternions[4 * j + 2],
            quaternions[4 * j + 3]};
  }
  void set_mean(std::size_t j, const Vec3& m);
  void set_log_scale(std::size_t j, const Vec3& s);
  void set_quaternion(std::size_t j, const Quat& q);

  Covariance3 covariance(std::size_t j) const;

  /// Throws InvalidParameter when array sizes disagree or values are non-finite.
  void validate() const;
};

/// Row-major M x K table of primitive indices.
struct NeighborIds {
  std::size_t k = 0;
  std::vector<std::uint32_t> ids;

  std::size_t rows() const { return k == 0 ? 0 : ids.size() / k; }
  std::span<const std::uint32_t> row(std::size_t i) const { return {ids.data() + i * k, k}; }
};

/// Every point lists all N primitives. Used for dense (K = N) evaluation.
NeighborIds dense_neighbors(std::size_t points, std::size_t n);

/// Inverse covariances of a field, validated against the eigenvalue floor.
/// Immutable once built; safe to share across threads.
class FieldEvaluator {
 public:
  explicit FieldEvaluator(const GaussianField& field);

  /// Normalized mixture at x restricted to `neighbors`.
  double value(const Vec3& x, std::span<const std::uint32_t> neighbors) const;

  const GaussianField& field() const { return *field_; }

 private:
  const GaussianField* field_;
  std::vector<Sym3> inverse_;
};

/// Normalized weighted mixture V(x) at each point over its listed neighbors.
/// Throws NumericalDegeneracy if a covariance eigenvalue falls below the floor.
std::vector<double> evaluate_field(std::span<const Vec3> points, const GaussianField& field,
                                   const NeighborIds& neighbors);

/// Copy of the field with every scale multiplied by gamma in (0, 1].
GaussianField shrink_for_viz(const GaussianField& field, double gamma);

/// Output raster: sizes, index-to-mm affine, voxels (x fastest) and optional mask.
struct VolumeGrid {
  int nx = 0, ny = 0, nz = 0;
  Mat4 affine = Mat4::Identity();
  std::vector<float> data;
  std::vector<std::uint8_t> mask;  // empty: no mask

  VolumeGrid() = default;
  VolumeGrid(int nx_, int ny_, int nz_, const Mat4& affine_);

  std::size_t size() const { return static_cast<std::size_t>(nx) * ny * nz; }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(nx) * (j + static_cast<std::size_t>(ny) * k);
  }
  bool has_mask() const { return !mask.empty(); }
  bool in_mask(std::size_t idx) const { return mask.empty() || mask[idx] != 0; }
  Vec3 voxel_center(int i, int j, int k) const;
  /// Isotropic grid of n^3 voxels with the given spacing, centered on the origin.
  static VolumeGrid centered(int n, double spacing);

  void validate() const;
};

/// Evaluates the field (no PSF) at voxel centers using the K nearest
/// primitives. Voxels outside a present mask are set to zero; without a mask
/// every voxel is evaluated.
VolumeGrid rasterize(const GaussianField& field, const VolumeGrid& grid, std::size_t k);

}  // namespace gsvr
