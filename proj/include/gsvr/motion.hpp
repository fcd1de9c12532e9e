#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "gsvr/forward_model.hpp"
#include "gsvr/geometry.hpp"

namespace gsvr {

/// One anisotropic acquisition. Pixels are stored x fastest, then y, then
/// slice. The affine maps (i, j, slice) indices to world mm.
struct SliceStack {
  int nx = 0, ny = 0, n_slices = 0;
  Mat4 affine = Mat4::Identity();
  double inplane_spacing = 1.0;
  double thickness = 1.0;
  std::vector<float> data;
  std::vector<std::uint8_t> mask;

  std::size_t pixels_per_slice() const { return static_cast<std::size_t>(nx) * ny; }
  std::size_t size() const { return pixels_per_slice() * n_slices; }
  std::size_t index(int i, int j, int slice) const {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(nx) * j +
           pixels_per_slice() * static_cast<std::size_t>(slice);
  }
  /// Orthonormal rotational part of the affine (slice frame axes as columns).
  Mat3 rotation() const;
  /// Throws InvalidParameter when geometry or array sizes are inconsistent.
  void validate() const;
};

/// Per-slice learnable state, as a value.
struct SliceState {
  Quat rotation = identity_quat();
  Vec3 translation = Vec3::Zero();
  double log_sigma = 0.0;  // intensity scalar sigma_i = exp(log_sigma)
  double eta = 0.0;        // outlier log-scale, weight omega_i = exp(-eta)
};

/// Flat storage of all slice states (global slice order: stack by stack).
struct SliceStates {
  std::vector<double> rotations;     // 4 per slice, w-first
  std::vector<double> translations;  // 3 per slice, mm
  std::vector<double> log_sigma;
  std::vector<double> eta;

  SliceStates() = default;
  explicit SliceStates(std::size_t n);

  std::size_t count() const { return log_sigma.size(); }
  SliceState get(std::size_t i) const;
  void set(std::size_t i, const SliceState& s);
};

/// Motion-corrected sample: world position, PSF orientation and observation.
struct SamplePoint {
  Vec3 world;
  Mat3 rotation;
  std::size_t slice = 0;  // global slice id
  int stack = 0;
  float observed = 0.0f;
};

/// World position of (u_x, u_y) on slice `slice_idx`. Throws IndexError when
/// the slice or the pixel coordinate lies outside the stack.
Vec3 lift_pixel(const SliceStack& stack, int slice_idx, const Vec2& u);

/// x = R(q_i) x0 + t_i and R_eff = R(q_i) R_stack.
std::pair<Vec3, Mat3> apply_correction(const SliceState& state, const Vec3& x0,
                                       const Mat3& stack_rotation);

/// Identity corrections for every slice of every stack.
SliceStates init_states(const std::vector<SliceStack>& stacks);

/// Index of the first slice of each stack in the global order, plus the total.
std::vector<std::size_t> slice_offsets(const std::vector<SliceStack>& stacks);

/// 1 for every global slice with at least one masked pixel, else 0.
std::vector<std::uint8_t> observed_slices(const std::vector<SliceStack>& stacks);

/// All masked pixels lifted and corrected with the given states.
std::vector<SamplePoint> gather_samples(const std::vector<SliceStack>& stacks,
                                        const SliceStates& states);

}  // namespace gsvr
