#pragma once

#include <Eigen/Core>
#include <Eigen/LU>
#include <stdexcept>
#include <string>

namespace gsvr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Quaternion stored as (w, x, y, z). Not required to be unit length.
using Quat = Eigen::Vector4d;

inline Quat identity_quat() { return Quat(1.0, 0.0, 0.0, 0.0); }

// Error taxonomy. Each maps onto one failure class of the public API.

struct InvalidParameter : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

/// A covariance fell below the eigenvalue floor.
struct NumericalDegeneracy : std::runtime_error {
  NumericalDegeneracy(const std::string& what, std::size_t primitive)
      : std::runtime_error(what), primitive_index(primitive) {}
  std::size_t primitive_index;
};

/// Loss or render became non-finite during optimization.
struct TrainingDivergence : std::runtime_error {
  TrainingDivergence(const std::string& what, long slice)
      : std::runtime_error(what), slice_id(slice) {}
  long slice_id;
};

struct UndefinedMetric : std::domain_error {
  using std::domain_error::domain_error;
};

struct UnsupportedFeature : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace gsvr
