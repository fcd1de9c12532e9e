#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "gsvr/geometry.hpp"

namespace gsvr {

/// FWHM = 2 sqrt(2 ln 2) sigma.
inline const double kFwhmPerSigma = 2.0 * std::sqrt(2.0 * std::log(2.0));

/// Gaussian slice profile, axis-aligned in slice coordinates: x/y in-plane,
/// z through-plane. Standard deviations in mm.
struct PsfModel {
  Vec3 sigma = Vec3::Zero();
  /// Scale each blurred weight by sqrt(det Sigma_j / det Sigma_obs), the
  /// peak of the exact convolution of an unnormalized Gaussian with the PSF.
  /// Off: the blurred weight keeps unit peak.
  bool mass_preserving = false;

  Covariance3 covariance() const {
    return {sigma.x() * sigma.x(), 0, 0, sigma.y() * sigma.y(), 0, sigma.z() * sigma.z()};
  }
  /// R Sigma_PSF R^T for a slice frame with rotation R.
  Covariance3 rotated(const Mat3& r) const;
  bool is_zero() const { return sigma.isZero(0.0); }
};

/// In-plane FWHM = inplane_factor * pixel size; through-plane FWHM =
/// through_factor * slice thickness. Throws InvalidParameter on non-positive input.
PsfModel build_psf(double inplane_res, double thickness, double inplane_factor = 1.2,
                   double through_factor = 1.0);

/// Sigma_obs = Sigma_j + R Sigma_PSF R^T.
Covariance3 convolve_covariance(const Covariance3& sigma_j, const Mat3& rotation,
                                const PsfModel& psf);

/// Closed-form PSF-convolved render of the normalized mixture at
/// motion-corrected world points. `slice_rotations[i]` orients the PSF of point
/// i and `slice_scale[i]` is its linear intensity scalar.
std::vector<double> render_observed(std::span<const Vec3> points,
                                    std::span<const Mat3> slice_rotations,
                                    const GaussianField& field, const PsfModel& psf,
                                    const NeighborIds& neighbors,
                                    std::span<const double> slice_scale);

/// Monte-Carlo reference for the slice-profile integral: averages the dense
/// mixture over `n_samples` Latin-hypercube samples of N(point, R Sigma_PSF R^T),
/// stratified along the PSF principal axes. Reproducible for a fixed seed.
double mc_oracle_render(const Vec3& point, const Mat3& slice_rotation, const GaussianField& field,
                        const PsfModel& psf, int n_samples, std::uint64_t seed);

/// Same as above with a prebuilt evaluator (avoids re-inverting covariances).
double mc_oracle_render(const Vec3& point, const Mat3& slice_rotation, const FieldEvaluator& eval,
                        const PsfModel& psf, int n_samples, std::uint64_t seed);

/// The sample positions the oracle would average over, in draw order.
std::vector<Vec3> mc_oracle_samples(const Vec3& point, const Mat3& slice_rotation,
                                    const PsfModel& psf, int n_samples, std::uint64_t seed);

}  // namespace gsvr
