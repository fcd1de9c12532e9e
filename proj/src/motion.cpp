#include "gsvr/motion.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <string>

namespace gsvr {

Mat3 SliceStack::rotation() const {
  const Mat3 linear = affine.topLeftCorner<3, 3>();
  Eigen::JacobiSVD<Mat3> svd(linear, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0) {
    // Left-handed index frame: flip the slice axis so the result stays a rotation.
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return r;
}

void SliceStack::validate() const {
  if (nx <= 0 || ny <= 0 || n_slices <= 0) throw InvalidParameter("SliceStack: empty dimensions");
  if (!(inplane_spacing > 0.0) || !(thickness > 0.0)) {
    throw InvalidParameter("SliceStack: spacing and thickness must be positive");
  }
  if (data.size() != size()) throw InvalidParameter("SliceStack: data size mismatch");
  if (mask.size() != size()) throw InvalidParameter("SliceStack: mask size mismatch");
  const double det = affine.topLeftCorner<3, 3>().determinant();
  if (!(std::abs(det) > 0.0) || !std::isfinite(det)) {
    throw InvalidParameter("SliceStack: affine is not invertible");
  }
}

SliceStates::SliceStates(std::size_t n)
    : rotations(4 * n, 0.0), translations(3 * n, 0.0), log_sigma(n, 0.0), eta(n, 0.0) {
  for (std::size_t i = 0; i < n; ++i) rotations[4 * i] = 1.0;
}

SliceState SliceStates::get(std::size_t i) const {
  SliceState s;
  s.rotation = Quat(rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2], rotations[4 * i + 3]);
  s.translation = Vec3(translations[3 * i], translations[3 * i + 1], translations[3 * i + 2]);
  s.log_sigma = log_sigma[i];
  s.eta = eta[i];
  return s;
}

void SliceStates::set(std::size_t i, const SliceState& s) {
  for (int a = 0; a < 4; ++a) rotations[4 * i + a] = s.rotation[a];
  for (int a = 0; a < 3; ++a) translations[3 * i + a] = s.translation[a];
  log_sigma[i] = s.log_sigma;
  eta[i] = s.eta;
}

Vec3 lift_pixel(const SliceStack& stack, int slice_idx, const Vec2& u) {
  if (slice_idx < 0 || slice_idx >= stack.n_slices) {
    throw IndexError("lift_pixel: slice " + std::to_string(slice_idx) + " outside [0, " +
                     std::to_string(stack.n_slices) + ")");
  }
  if (!(u.x() >= -0.5 && u.x() <= stack.nx - 0.5 && u.y() >= -0.5 && u.y() <= stack.ny - 0.5)) {
    throw IndexError("lift_pixel: pixel coordinate outside the slice");
  }
  return (stack.affine * Eigen::Vector4d(u.x(), u.y(), slice_idx, 1.0)).head<3>();
}

std::pair<Vec3, Mat3> apply_correction(const SliceState& state, const Vec3& x0,
                                       const Mat3& stack_rotation) {
  const Mat3 r = quat_to_rotation(state.rotation);
  return {r * x0 + state.translation, r * stack_rotation};
}

std::vector<std::size_t> slice_offsets(const std::vector<SliceStack>& stacks) {
  std::vector<std::size_t> offsets(stacks.size() + 1, 0);
  for (std::size_t s = 0; s < stacks.size(); ++s) {
    offsets[s + 1] = offsets[s] + static_cast<std::size_t>(stacks[s].n_slices);
  }
  return offsets;
}

SliceStates init_states(const std::vector<SliceStack>& stacks) {
  return SliceStates(slice_offsets(stacks).back());
}

std::vector<SamplePoint> gather_samples(const std::vector<SliceStack>& stacks,
                                        const SliceStates& states) {
  const auto offsets = slice_offsets(stacks);
  if (states.count() != offsets.back()) {
    throw InvalidParameter("gather_samples: state count does not match slice count");
  }
  std::vector<SamplePoint> out;
  for (std::size_t s = 0; s < stacks.size(); ++s) {
    const SliceStack& stack = stacks[s];
    const Mat3 r_stack = stack.rotation();
    for (int k = 0; k < stack.n_slices; ++k) {
      const std::size_t slice = offsets[s] + static_cast<std::size_t>(k);
      const SliceState state = states.get(slice);
      for (int j = 0; j < stack.ny; ++j) {
        for (int i = 0; i < stack.nx; ++i) {
          const std::size_t idx = stack.index(i, j, k);
          if (!stack.mask[idx]) continue;
          const Vec3 x0 = lift_pixel(stack, k, Vec2(i, j));
          auto [x, r_eff] = apply_correction(state, x0, r_stack);
          out.push_back(SamplePoint{x, r_eff, slice, static_cast<int>(s), stack.data[idx]});
        }
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> observed_slices(const std::vector<SliceStack>& stacks) {
  std::vector<std::uint8_t> out;
  for (const SliceStack& stack : stacks) {
    const std::size_t per = stack.pixels_per_slice();
    for (int k = 0; k < stack.n_slices; ++k) {
      const auto begin = stack.mask.begin() + static_cast<std::ptrdiff_t>(per * k);
      out.push_back(std::any_of(begin, begin + static_cast<std::ptrdiff_t>(per), [](std::uint8_t m) { return m != 0; }));
    }
  }
  return out;
}

}  // namespace gsvr
