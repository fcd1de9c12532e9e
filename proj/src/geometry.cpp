#include "gsvr/geometry.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <string>

#include "gsvr/knn_index.hpp"

namespace gsvr {

Mat3 quat_to_rotation(const Quat& q) {
  const double norm = q.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw InvalidParameter("quat_to_rotation: quaternion must have finite non-zero norm");
  }
  const double w = q[0] / norm, x = q[1] / norm, y = q[2] / norm, z = q[3] / norm;
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Quat quat_multiply(const Quat& a, const Quat& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

Quat quat_from_axis_angle(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (!(n > 0.0)) throw InvalidParameter("quat_from_axis_angle: zero axis");
  const Vec3 u = axis / n * std::sin(0.5 * angle);
  return {std::cos(0.5 * angle), u.x(), u.y(), u.z()};
}

Quat quat_rotation_backward(const Quat& q, const Mat3& g) {
  const double norm = q.norm();
  const double w = q[0] / norm, x = q[1] / norm, y = q[2] / norm, z = q[3] / norm;
  // dL/d(unit quaternion), entry by entry of the rotation formula.
  const double gw = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) +
                         x * g(2, 1));
  const double gx = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - w * g(1, 2) + z * g(2, 0) +
                         w * g(2, 1)) -
                    4 * x * (g(1, 1) + g(2, 2));
  const double gy = 2 * (x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                         z * g(2, 1)) -
                    4 * y * (g(0, 0) + g(2, 2));
  const double gz = 2 * (-w * g(0, 1) + x * g(0, 2) + w * g(1, 0) + y * g(1, 2) + x * g(2, 0) +
                         y * g(2, 1)) -
                    4 * z * (g(0, 0) + g(1, 1));
  const Quat unit(w, x, y, z);
  const Quat gu(gw, gx, gy, gz);
  // Project out the radial component: the rotation ignores |q|.
  return (gu - unit * unit.dot(gu)) / norm;
}

Sym3 Sym3::from(const Mat3& m) {
  return {m(0, 0), 0.5 * (m(0, 1) + m(1, 0)), 0.5 * (m(0, 2) + m(2, 0)), m(1, 1),
          0.5 * (m(1, 2) + m(2, 1)), m(2, 2)};
}

Mat3 Sym3::full() const {
  Mat3 m;
  m << xx, xy, xz, xy, yy, yz, xz, yz, zz;
  return m;
}

double Sym3::determinant() const {
  return xx * (yy * zz - yz * yz) - xy * (xy * zz - yz * xz) + xz * (xy * yz - yy * xz);
}

Sym3 Sym3::inverse() const {
  const double c00 = yy * zz - yz * yz;
  const double c01 = xz * yz - xy * zz;
  const double c02 = xy * yz - xz * yy;
  const double c11 = xx * zz - xz * xz;
  const double c12 = xy * xz - xx * yz;
  const double c22 = xx * yy - xy * xy;
  const double inv_det = 1.0 / (xx * c00 + xy * c01 + xz * c02);
  return {c00 * inv_det, c01 * inv_det, c02 * inv_det, c11 * inv_det, c12 * inv_det, c22 * inv_det};
}

double Sym3::quad(const Vec3& v) const {
  const double a = v.x(), b = v.y(), c = v.z();
  return xx * a * a + yy * b * b + zz * c * c + 2.0 * (xy * a * b + xz * a * c + yz * b * c);
}

Vec3 Sym3::apply(const Vec3& v) const {
  return {xx * v.x() + xy * v.y() + xz * v.z(), xy * v.x() + yy * v.y() + yz * v.z(),
          xz * v.x() + yz * v.y() + zz * v.z()};
}

Sym3 Sym3::operator+(const Sym3& o) const {
  return {xx + o.xx, xy + o.xy, xz + o.xz, yy + o.yy, yz + o.yz, zz + o.zz};
}

Covariance3 build_covariance(const Vec3& log_s, const Quat& q) {
  const Mat3 r = quat_to_rotation(q);
  const Vec3 var = (2.0 * log_s).array().exp();
  return Sym3::from(r * var.asDiagonal() * r.transpose());
}

GaussianField::GaussianField(std::size_t n)
    : means(3 * n, 0.0), log_scales(3 * n, 0.0), quaternions(4 * n, 0.0), intensities(n, 0.0) {
  for (std::size_t j = 0; j < n; ++j) quaternions[4 * j] = 1.0;
}

void GaussianField::set_mean(std::size_t j, const Vec3& m) {
  for (int a = 0; a < 3; ++a) means[3 * j + a] = m[a];
}

void GaussianField::set_log_scale(std::size_t j, const Vec3& s) {
  for (int a = 0; a < 3; ++a) log_scales[3 * j + a] = s[a];
}

void GaussianField::set_quaternion(std::size_t j, const Quat& q) {
  for (int a = 0; a < 4; ++a) quaternions[4 * j + a] = q[a];
}

Covariance3 GaussianField::covariance(std::size_t j) const {
  return build_covariance(log_scale(j), quaternion(j));
}

void GaussianField::validate() const {
  const std::size_t n = count();
  if (n == 0) throw InvalidParameter("GaussianField: count must be positive");
  if (means.size() != 3 * n || log_scales.size() != 3 * n || quaternions.size() != 4 * n) {
    throw InvalidParameter("GaussianField: inconsistent array sizes");
  }
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(means) || !finite(log_scales) || !finite(quaternions) || !finite(intensities)) {
    throw InvalidParameter("GaussianField: non-finite parameter");
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (!(quaternion(j).norm() > 0.0)) {
      throw InvalidParameter("GaussianField: zero quaternion at primitive " + std::to_string(j));
    }
  }
}

NeighborIds dense_neighbors(std::size_t points, std::size_t n) {
  NeighborIds ids;
  ids.k = n;
  ids.ids.resize(points * n);
  for (std::size_t i = 0; i < points; ++i) {
    for (std::size_t j = 0; j < n; ++j) ids.ids[i * n + j] = static_cast<std::uint32_t>(j);
  }
  return ids;
}

FieldEvaluator::FieldEvaluator(const GaussianField& field) : field_(&field) {
  const std::size_t n = field.count();
  inverse_.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const Vec3 ls = field.log_scale(j);
    // Eigenvalues of the covariance are exactly exp(2 log_s).
    const double min_eig = std::exp(2.0 * ls.minCoeff());
    if (!(min_eig >= kEigenFloor)) {
      throw NumericalDegeneracy("covariance of primitive " + std::to_string(j) +
                                    " below eigenvalue floor (" + std::to_string(min_eig) + ")",
                                j);
    }
    inverse_[j] = field.covariance(j).inverse();
  }
}

double FieldEvaluator::value(const Vec3& x, std::span<const std::uint32_t> neighbors) const {
  double num = 0.0, den = 0.0;
  for (const std::uint32_t j : neighbors) {
    const Vec3 v = x - field_->mean(j);
    const double e = std::min(0.5 * inverse_[j].quad(v), kMaxExponent);
    const double w = std::exp(-e);
    num += field_->intensities[j] * w;
    den += w;
  }
  return num / (den + kMixtureDelta);
}

std::vector<double> evaluate_field(std::span<const Vec3> points, const GaussianField& field,
                                   const NeighborIds& neighbors) {
  if (neighbors.k == 0) throw InvalidParameter("evaluate_field: K must be >= 1");
  if (neighbors.rows() != points.size()) {
    throw InvalidParameter("evaluate_field: neighbor table rows must match point count");
  }
  const std::size_t n = field.count();
  for (const std::uint32_t id : neighbors.ids) {
    if (id >= n) throw IndexError("evaluate_field: neighbor id " + std::to_string(id) + " out of range");
  }
  const FieldEvaluator eval(field);
  std::vector<double> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = eval.value(points[i], neighbors.row(i));
  return out;
}

GaussianField shrink_for_viz(const GaussianField& field, double gamma) {
  if (!(gamma > 0.0) || gamma > 1.0) {
    throw InvalidParameter("shrink_for_viz: gamma must lie in (0, 1]");
  }
  GaussianField out = field;
  if (gamma == 1.0) return out;
  const double shift = std::log(gamma);
  for (double& s : out.log_scales) s += shift;
  return out;
}

VolumeGrid::VolumeGrid(int nx_, int ny_, int nz_, const Mat4& affine_)
    : nx(nx_), ny(ny_), nz(nz_), affine(affine_), data(size(), 0.0f) {}

Vec3 VolumeGrid::voxel_center(int i, int j, int k) const {
  return (affine * Eigen::Vector4d(i, j, k, 1.0)).head<3>();
}

VolumeGrid VolumeGrid::centered(int n, double spacing) {
  Mat4 a = Mat4::Identity();
  a.topLeftCorner<3, 3>() *= spacing;
  const double origin = -0.5 * spacing * (n - 1);
  a.block<3, 1>(0, 3) = Vec3::Constant(origin);
  return VolumeGrid(n, n, n, a);
}

void VolumeGrid::validate() const {
  if (nx <= 0 || ny <= 0 || nz <= 0) throw InvalidParameter("VolumeGrid: sizes must be positive");
  if (data.size() != size()) throw InvalidParameter("VolumeGrid: data size mismatch");
  if (!mask.empty() && mask.size() != size()) throw InvalidParameter("VolumeGrid: mask size mismatch");
  const double det = affine.topLeftCorner<3, 3>().determinant();
  if (!(std::abs(det) > 0.0) || !std::isfinite(det)) {
    throw InvalidParameter("VolumeGrid: affine is not invertible");
  }
}

VolumeGrid rasterize(const GaussianField& field, const VolumeGrid& grid, std::size_t k) {
  if (!(grid.affine.topLeftCorner<3, 3>().determinant() != 0.0)) {
    throw InvalidParameter("rasterize: affine is not invertible");
  }
  VolumeGrid out = grid;
  out.data.assign(grid.size(), 0.0f);

  std::vector<Vec3> centers;
  std::vector<std::size_t> targets;
  centers.reserve(grid.size());
  for (int z = 0; z < grid.nz; ++z) {
    for (int y = 0; y < grid.ny; ++y) {
      for (int x = 0; x < grid.nx; ++x) {
        const std::size_t idx = grid.index(x, y, z);
        if (!grid.in_mask(idx)) continue;
        centers.push_back(grid.voxel_center(x, y, z));
        targets.push_back(idx);
      }
    }
  }
  if (centers.empty()) return out;

  const NeighborIndex index = NeighborIndex::build(field.means, k);
  const FieldEvaluator eval(field);
  std::vector<std::uint32_t> ids(k);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    index.query_one(centers[i], k, ids);
    out.data[targets[i]] = static_cast<float>(eval.value(centers[i], ids));
  }
  return out;
}

}  // namespace gsvr
