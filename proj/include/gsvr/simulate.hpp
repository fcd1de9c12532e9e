#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "gsvr/forward_model.hpp"
#include "gsvr/geometry.hpp"
#include "gsvr/motion.hpp"

namespace gsvr {

/// Analytic brain-like phantom: nested ellipsoidal shells whose radius is
/// modulated by a few plane waves (folded cortex proxy), two bright
/// ventricle-like ellipsoids and one faint blob. Values in [0, 1]; zero at and
/// beyond the outer (modulated) surface.
struct Phantom {
  Vec3 semi_axes;                  // outer ellipsoid, mm
  std::array<Vec3, 3> fold_dirs;   // unit vectors
  std::array<double, 3> fold_freq;
  std::array<double, 3> fold_phase;
  double fold_amplitude = 0.06;
  double edge_width = 0.04;        // transition width in normalized radius
  std::array<Vec3, 2> ventricle_centers;
  Vec3 ventricle_axes;
  Vec3 blob_center;
  double blob_radius = 0.0;

  static Phantom from_seed(double half_extent, std::uint64_t seed);

  /// Normalized (modulated) radius; the support is radius < 1.
  double radius(const Vec3& x) const;
  double value(const Vec3& x) const;
};

/// size^3 grid at `spacing` mm centered on the origin, filled with the
/// phantom at voxel centers; mask = phantom support.
VolumeGrid make_phantom(int size, std::uint64_t seed, double spacing = 0.5);

struct MotionParams {
  double rot_max_deg = 6.0;
  double trans_max_mm = 4.0;
  std::uint64_t seed = 0;
};

struct AcquisitionParams {
  double inplane = 0.5;
  double thickness = 3.0;
  double noise_std = 0.02;
  double inplane_fwhm_factor = 1.2;
  double through_fwhm_factor = 1.0;
  /// Quadrature density along each PSF principal axis (cells per sigma),
  /// truncated at 3 sigma.
  double samples_per_sigma = 3.0;
  /// A pixel joins the slice mask when its PSF-weighted ground-truth mask
  /// exceeds this fraction.
  double mask_threshold = 0.5;
};

/// Slice normal of a stack: 0 = x (sagittal), 1 = y (coronal), 2 = z (axial).
using SliceAxis = int;

struct SimulatedStack {
  SliceStack stack;
  SliceStates truth;  // true per-slice corrections (one entry per slice)
};

/// Acquires one stack from the ground truth: each pixel integrates the
/// trilinearly interpolated volume against the slice-oriented Gaussian PSF by
/// tensor-product quadrature, with a per-slice rigid perturbation drawn from
/// U(+-rot_max) per Euler angle and U(+-trans_max) per axis, then adds
/// N(0, noise_std^2). `stack_id` decorrelates the random streams of stacks.
/// Slice 0 of stack 0 is acquired without motion; it fixes the world frame.
SimulatedStack simulate_stack(const VolumeGrid& gt, const AcquisitionParams& acq,
                              const MotionParams& motion, SliceAxis orientation, int stack_id = 0,
                              int threads = 0);

/// Geometry of the stack simulate_stack would produce (data zero, no mask).
SliceStack stack_geometry(const VolumeGrid& gt, const AcquisitionParams& acq, SliceAxis orientation);

/// PSF-weighted average of the trilinear ground truth around `center`,
/// exposed for tests. Also returns the same integral of the mask.
std::pair<double, double> integrate_psf(const VolumeGrid& gt, const Vec3& center,
                                        const Mat3& rotation, const PsfModel& psf,
                                        double samples_per_sigma);

/// Trilinear interpolation of the grid at a world point; zero outside.
double sample_trilinear(const VolumeGrid& grid, const Vec3& world);

/// Unit quaternion of a rotation matrix.
Quat rotation_to_quat(const Mat3& r);

}  // namespace gsvr
