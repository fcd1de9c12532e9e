#include "gsvr/forward_model.hpp"

#include <algorithm>
#include <boost/math/special_functions/erf.hpp>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace gsvr {

Covariance3 PsfModel::rotated(const Mat3& r) const {
  const Vec3 var = sigma.cwiseProduct(sigma);
  return Sym3::from(r * var.asDiagonal() * r.transpose());
}

PsfModel build_psf(double inplane_res, double thickness, double inplane_factor,
                   double through_factor) {
  if (!(inplane_res > 0.0) || !(thickness > 0.0) || !(inplane_factor > 0.0) ||
      !(through_factor > 0.0)) {
    throw InvalidParameter("build_psf: resolution, thickness and FWHM factors must be positive");
  }
  const double s_in = inplane_factor * inplane_res / kFwhmPerSigma;
  const double s_through = through_factor * thickness / kFwhmPerSigma;
  return PsfModel{Vec3(s_in, s_in, s_through)};
}

Covariance3 convolve_covariance(const Covariance3& sigma_j, const Mat3& rotation,
                                const PsfModel& psf) {
  return sigma_j + psf.rotated(rotation);
}

std::vector<double> render_observed(std::span<const Vec3> points,
                                    std::span<const Mat3> slice_rotations,
                                    const GaussianField& field, const PsfModel& psf,
                                    const NeighborIds& neighbors,
                                    std::span<const double> slice_scale) {
  const std::size_t m = points.size();
  if (slice_rotations.size() != m || slice_scale.size() != m || neighbors.rows() != m) {
    throw InvalidParameter("render_observed: per-point inputs must have matching lengths");
  }
  if (neighbors.k == 0) throw InvalidParameter("render_observed: K must be >= 1");
  const std::size_t n = field.count();

  std::vector<Covariance3> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (std::exp(2.0 * field.log_scale(j).minCoeff()) < kEigenFloor) {
      throw NumericalDegeneracy("render_observed: primitive " + std::to_string(j) +
                                    " below eigenvalue floor",
                                j);
    }
    sigma[j] = field.covariance(j);
  }

  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const Covariance3 psf_world = psf.rotated(slice_rotations[i]);
    double num = 0.0, den = 0.0;
    for (const std::uint32_t j : neighbors.row(i)) {
      if (j >= n) throw IndexError("render_observed: neighbor id out of range");
      // Fused: covariance sum, inversion and quadratic form per pair.
      const Covariance3 obs = sigma[j] + psf_world;
      const Vec3 v = points[i] - field.mean(j);
      const double e = std::min(0.5 * obs.inverse().quad(v), kMaxExponent);
      double w = std::exp(-e);
      if (psf.mass_preserving) w *= std::sqrt(sigma[j].determinant() / obs.determinant());
      num += field.intensities[j] * w;
      den += w;
    }
    out[i] = slice_scale[i] * num / (den + kMixtureDelta);
  }
  return out;
}

std::vector<Vec3> mc_oracle_samples(const Vec3& point, const Mat3& slice_rotation,
                                    const PsfModel& psf, int n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw InvalidParameter("mc_oracle_render: n_samples must be >= 1");
  const auto n = static_cast<std::size_t>(n_samples);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Latin hypercube in the PSF principal frame: one stratum per sample per axis.
  std::vector<double> z[3];
  for (int axis = 0; axis < 3; ++axis) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    z[axis].resize(n);
    for (std::size_t s = 0; s < n; ++s) {
      double u = (static_cast<double>(perm[s]) + unit(rng)) / static_cast<double>(n);
      u = std::clamp(u, 1e-15, 1.0 - 1e-15);
      z[axis][s] = std::sqrt(2.0) * boost::math::erf_inv(2.0 * u - 1.0) * psf.sigma[axis];
    }
  }
  std::vector<Vec3> samples(n);
  for (std::size_t s = 0; s < n; ++s) {
    samples[s] = point + slice_rotation * Vec3(z[0][s], z[1][s], z[2][s]);
  }
  return samples;
}

double mc_oracle_render(const Vec3& point, const Mat3& slice_rotation, const FieldEvaluator& eval,
                        const PsfModel& psf, int n_samples, std::uint64_t seed) {
  const std::vector<Vec3> samples = mc_oracle_samples(point, slice_rotation, psf, n_samples, seed);
  const std::size_t n = eval.field().count();
  std::vector<std::uint32_t> all(n);
  std::iota(all.begin(), all.end(), 0u);
  double acc = 0.0;
  for (const Vec3& y : samples) acc += eval.value(y, all);
  return acc / static_cast<double>(samples.size());
}

double mc_oracle_render(const Vec3& point, const Mat3& slice_rotation, const GaussianField& field,
                        const PsfModel& psf, int n_samples, std::uint64_t seed) {
  const FieldEvaluator eval(field);
  return mc_oracle_render(point, slice_rotation, eval, psf, n_samples, seed);
}

}  // namespace gsvr
