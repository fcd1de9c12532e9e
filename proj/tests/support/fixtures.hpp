#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "gsvr/geometry.hpp"
#include "gsvr/motion.hpp"
#include "gsvr/objective.hpp"

namespace gsvr::testing {

inline Quat random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Quat(n(rng), n(rng), n(rng), n(rng)).normalized();
}

inline Mat3 random_rotation(std::mt19937_64& rng) { return quat_to_rotation(random_quat(rng)); }

/// Primitives with means uniform in a cube of half-width `extent`, scales in
/// [0.5, 1.5] * scale and random orientation and intensity.
inline GaussianField random_field(std::size_t n, std::mt19937_64& rng, double extent = 2.0,
                                  double scale = 1.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), s(0.5, 1.5), c(0.0, 1.0);
  GaussianField f(n);
  for (std::size_t j = 0; j < n; ++j) {
    f.set_mean(j, Vec3(u(rng), u(rng), u(rng)) * extent);
    f.set_log_scale(j, Vec3(std::log(s(rng) * scale), std::log(s(rng) * scale), std::log(s(rng) * scale)));
    f.set_quaternion(j, random_quat(rng));
    f.intensities[j] = c(rng);
  }
  return f;
}

/// One stack of `n_slices` slices of nx x ny pixels with a rotated affine,
/// random observed values and a full mask.
inline SliceStack random_stack(int nx, int ny, int n_slices, std::mt19937_64& rng,
                               double inplane = 0.6, double thickness = 1.5) {
  SliceStack s;
  s.nx = nx;
  s.ny = ny;
  s.n_slices = n_slices;
  s.inplane_spacing = inplane;
  s.thickness = thickness;
  const Mat3 r = random_rotation(rng);
  s.affine.setIdentity();
  s.affine.topLeftCorner<3, 3>() = r * Vec3(inplane, inplane, thickness).asDiagonal();
  const Vec3 center(0.5 * (nx - 1), 0.5 * (ny - 1), 0.5 * (n_slices - 1));
  s.affine.block<3, 1>(0, 3) = -(s.affine.topLeftCorner<3, 3>() * center);
  std::uniform_real_distribution<double> c(0.0, 1.0);
  s.data.resize(s.size());
  for (float& v : s.data) v = static_cast<float>(c(rng));
  s.mask.assign(s.size(), 1);
  return s;
}

/// Random per-slice corrections, intensity scales and outlier log-scales.
inline SliceStates random_states(std::size_t n, std::mt19937_64& rng, double rot_deg = 5.0,
                                 double trans = 0.3) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  SliceStates states(n);
  for (std::size_t i = 0; i < n; ++i) {
    SliceState st;
    const Vec3 axis = Vec3(u(rng), u(rng), u(rng)).normalized();
    st.rotation = quat_from_axis_angle(axis, rot_deg * M_PI / 180.0 * u(rng));
    st.translation = Vec3(u(rng), u(rng), u(rng)) * trans;
    st.log_sigma = 0.2 * u(rng);
    st.eta = 0.3 * u(rng);
    states.set(i, st);
  }
  return states;
}

/// Axis-aligned stack centered on the origin with a full mask and zero data.
inline SliceStack centered_stack(int nx, int ny, int n_slices, double inplane, double thickness,
                                 const Mat3& rotation = Mat3::Identity()) {
  SliceStack s;
  s.nx = nx;
  s.ny = ny;
  s.n_slices = n_slices;
  s.inplane_spacing = inplane;
  s.thickness = thickness;
  s.affine.setIdentity();
  s.affine.topLeftCorner<3, 3>() = rotation * Vec3(inplane, inplane, thickness).asDiagonal();
  const Vec3 center(0.5 * (nx - 1), 0.5 * (ny - 1), 0.5 * (n_slices - 1));
  s.affine.block<3, 1>(0, 3) = -(s.affine.topLeftCorner<3, 3>() * center);
  s.data.assign(s.size(), 0.0f);
  s.mask.assign(s.size(), 1);
  return s;
}

/// Overwrites the stack data with the field's own PSF-blurred rendering
/// (identity motion, unit intensity scale). Requires a full mask.
inline void render_into(SliceStack& stack, const GaussianField& field) {
  const std::vector<SliceStack> one = {stack};
  const TrainingData data = make_training_data(one, {build_psf(stack.inplane_spacing, stack.thickness)});
  const SliceStates states = init_states(one);
  const NeighborTable nt = refresh_neighbors(data, field, states, field.count());
  std::vector<std::vector<double>> pred;
  ObjectiveOptions opt;
  opt.predictions = &pred;
  compute_loss(data, nt, field, states, LossConfig{}, opt);
  for (int k = 0; k < stack.n_slices; ++k) {
    for (std::size_t p = 0; p < stack.pixels_per_slice(); ++p) {
      stack.data[stack.pixels_per_slice() * static_cast<std::size_t>(k) + p] = static_cast<float>(pred[static_cast<std::size_t>(k)][p]);
    }
  }
}

/// Fourth-order central difference of `loss` with respect to params[i].
inline double numeric_derivative(std::vector<double>& params, std::size_t i,
                                 const std::function<double()>& loss, double h) {
  const double saved = params[i];
  auto at = [&](double offset) {
    params[i] = saved + offset;
    return loss();
  };
  const double d1 = at(h) - at(-h);
  const double d2 = at(2.0 * h) - at(-2.0 * h);
  params[i] = saved;
  return (8.0 * d1 - d2) / (12.0 * h);
}

/// Max over entries of |a - n| / max(|a|, |n|, floor), n from
/// numeric_derivative on every entry of `params`.
inline double max_rel_error(std::vector<double>& params, const std::vector<double>& analytic,
                            const std::function<double()>& loss, double h = 1e-5,
                            double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double numeric = numeric_derivative(params, i, loss, h);
    const double err = std::abs(analytic[i] - numeric) /
                       std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace gsvr::testing
