#include "gsvr/simulate.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "gsvr/parallel.hpp"

namespace gsvr {

namespace {

double smoothstep(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// Cell-centered nodes and exact Gaussian masses along one axis.
void quadrature_nodes(double sigma, double samples_per_sigma, std::vector<double>& z,
                      std::vector<double>& w) {
  z.clear();
  w.clear();
  if (!(sigma > 0.0)) {
    z.push_back(0.0);
    w.push_back(1.0);
    return;
  }
  const int half = static_cast<int>(std::ceil(3.0 * samples_per_sigma - 0.5));
  const double h = sigma / samples_per_sigma;
  const double inv = 1.0 / (sigma * std::numbers::sqrt2);
  double total = 0.0;
  for (int t = -half; t <= half; ++t) {
    const double c = t * h;
    const double mass = 0.5 * (std::erf((c + 0.5 * h) * inv) - std::erf((c - 0.5 * h) * inv));
    z.push_back(c);
    w.push_back(mass);
    total += mass;
  }
  for (double& v : w) v /= total;
}

std::uint64_t stream_seed(std::uint64_t seed, int stack_id, int slice, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stack_id), static_cast<std::uint32_t>(slice),
                    static_cast<std::uint32_t>(salt)};
  std::uint64_t out[1];
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out[0];
}

struct Trilinear {
  const VolumeGrid* grid;
  bool has_mask;

  // Returns (value, mask) at continuous index coordinates.
  std::pair<double, double> at(const Vec3& p) const {
    const double fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy), z0 = static_cast<int>(fz);
    const double ax = p.x() - fx, ay = p.y() - fy, az = p.z() - fz;
    double value = 0.0, mask = 0.0;
    for (int c = 0; c < 8; ++c) {
      const int x = x0 + (c & 1), y = y0 + ((c >> 1) & 1), z = z0 + ((c >> 2) & 1);
      if (x < 0 || y < 0 || z < 0 || x >= grid->nx || y >= grid->ny || z >= grid->nz) continue;
      const double wgt = ((c & 1) ? ax : 1 - ax) * (((c >> 1) & 1) ? ay : 1 - ay) *
                         (((c >> 2) & 1) ? az : 1 - az);
      if (wgt == 0.0) continue;
      const std::size_t idx = grid->index(x, y, z);
      value += wgt * grid->data[idx];
      mask += wgt * (has_mask ? (grid->mask[idx] ? 1.0 : 0.0) : 1.0);
    }
    return {value, mask};
  }
};

}  // namespace

Phantom Phantom::from_seed(double half_extent, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Phantom p;
  p.semi_axes = Vec3(0.85, 0.75, 0.68) * half_extent;
  for (int l = 0; l < 3; ++l) {
    Vec3 d(gauss(rng), gauss(rng), gauss(rng));
    p.fold_dirs[static_cast<std::size_t>(l)] = d.normalized();
    p.fold_freq[static_cast<std::size_t>(l)] = 5.0 + 3.0 * unit(rng);
    p.fold_phase[static_cast<std::size_t>(l)] = 2.0 * std::numbers::pi * unit(rng);
  }
  const double jitter = 0.9 + 0.2 * unit(rng);
  p.ventricle_axes = Vec3(0.12, 0.28, 0.16).cwiseProduct(p.semi_axes) * jitter;
  p.ventricle_centers[0] = Vec3(0.22, 0.05, 0.10).cwiseProduct(p.semi_axes);
  p.ventricle_centers[1] = Vec3(-0.22, 0.05, 0.10).cwiseProduct(p.semi_axes);
  p.blob_center = Vec3(unit(rng) - 0.5, -0.2 - 0.2 * unit(rng), unit(rng) - 0.5)
                      .cwiseProduct(0.6 * p.semi_axes);
  p.blob_radius = 0.18 * p.semi_axes.minCoeff();
  return p;
}

double Phantom::radius(const Vec3& x) const {
  const double rho = x.cwiseQuotient(semi_axes).norm();
  const double len = x.norm();
  if (len == 0.0) return 0.0;
  const Vec3 d = x / len;
  double mod = 0.0;
  for (std::size_t l = 0; l < 3; ++l) mod += std::sin(fold_freq[l] * (d.dot(fold_dirs[l])) * 2.0 + fold_phase[l]);
  return rho / (1.0 + fold_amplitude * mod / 3.0);
}

double Phantom::value(const Vec3& x) const {
  const double r = radius(x);
  if (r >= 1.0) return 0.0;
  // Outer CSF 0.9, cortex band 0.55, white matter 0.3.
  double v = 0.9 * smoothstep((1.0 - r) / edge_width);
  v += (0.55 - 0.9) * smoothstep((0.9 - r) / edge_width);
  v += (0.30 - 0.55) * smoothstep((0.78 - r) / edge_width);
  for (const Vec3& c : ventricle_centers) {
    const double rv = (x - c).cwiseQuotient(ventricle_axes).norm();
    v += 0.5 * smoothstep((1.0 - rv) / 0.15);
  }
  const double rb = (x - blob_center).norm() / blob_radius;
  v += 0.08 * smoothstep((1.0 - rb) / 0.3);
  return std::clamp(v, 0.0, 1.0);
}

VolumeGrid make_phantom(int size, std::uint64_t seed, double spacing) {
  if (size < 32) throw InvalidParameter("make_phantom: size must be >= 32");
  if (!(spacing > 0.0)) throw InvalidParameter("make_phantom: spacing must be positive");
  VolumeGrid grid = VolumeGrid::centered(size, spacing);
  grid.mask.assign(grid.size(), 0);
  const Phantom phantom = Phantom::from_seed(0.5 * size * spacing, seed);
  for (int z = 0; z < size; ++z) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const Vec3 p = grid.voxel_center(x, y, z);
        const std::size_t idx = grid.index(x, y, z);
        grid.data[idx] = static_cast<float>(phantom.value(p));
        grid.mask[idx] = phantom.radius(p) < 1.0 ? 1 : 0;
      }
    }
  }
  return grid;
}

double sample_trilinear(const VolumeGrid& grid, const Vec3& world) {
  const Mat4 inv = grid.affine.inverse();
  const Vec3 p = (inv * Eigen::Vector4d(world.x(), world.y(), world.z(), 1.0)).head<3>();
  return Trilinear{&grid, false}.at(p).first;
}

Quat rotation_to_quat(const Mat3& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  if (q.w() < 0) q.coeffs() *= -1.0;
  return Quat(q.w(), q.x(), q.y(), q.z());
}

std::pair<double, double> integrate_psf(const VolumeGrid& gt, const Vec3& center,
                                        const Mat3& rotation, const PsfModel& psf,
                                        double samples_per_sigma) {
  const Mat4 inv = gt.affine.inverse();
  const Mat3 to_index = inv.topLeftCorner<3, 3>() * rotation;
  const Vec3 base = (inv * Eigen::Vector4d(center.x(), center.y(), center.z(), 1.0)).head<3>();
  std::vector<double> z[3], w[3];
  for (int a = 0; a < 3; ++a) quadrature_nodes(psf.sigma[a], samples_per_sigma, z[a], w[a]);
  const Trilinear interp{&gt, gt.has_mask()};
  double value = 0.0, mask = 0.0;
  for (std::size_t i2 = 0; i2 < z[2].size(); ++i2) {
    const Vec3 p2 = base + to_index.col(2) * z[2][i2];
    for (std::size_t i1 = 0; i1 < z[1].size(); ++i1) {
      const Vec3 p1 = p2 + to_index.col(1) * z[1][i1];
      const double w12 = w[2][i2] * w[1][i1];
      for (std::size_t i0 = 0; i0 < z[0].size(); ++i0) {
        const auto [v, m] = interp.at(p1 + to_index.col(0) * z[0][i0]);
        const double wt = w12 * w[0][i0];
        value += wt * v;
        mask += wt * m;
      }
    }
  }
  return {value, mask};
}

SliceStack stack_geometry(const VolumeGrid& gt, const AcquisitionParams& acq, SliceAxis orientation) {
  if (orientation < 0 || orientation > 2) throw InvalidParameter("simulate: orientation must be 0, 1 or 2");
  if (!(acq.inplane > 0.0) || !(acq.thickness > 0.0)) {
    throw InvalidParameter("simulate: spacings must be positive");
  }
  // World extent and center of the ground truth.
  const Vec3 first = gt.voxel_center(0, 0, 0);
  const Vec3 last = gt.voxel_center(gt.nx - 1, gt.ny - 1, gt.nz - 1);
  const Vec3 center = 0.5 * (first + last);
  const Vec3 spacing = gt.affine.topLeftCorner<3, 3>().colwise().norm().transpose();
  const Vec3 extent = Vec3(gt.nx, gt.ny, gt.nz).cwiseProduct(spacing);

  // Right-handed frames: (y, z, x), (z, x, y), (x, y, z).
  const int a0 = (orientation + 1) % 3, a1 = (orientation + 2) % 3, a2 = orientation;
  SliceStack s;
  s.inplane_spacing = acq.inplane;
  s.thickness = acq.thickness;
  s.nx = static_cast<int>(std::ceil(extent[a0] / acq.inplane - 1e-9));
  s.ny = static_cast<int>(std::ceil(extent[a1] / acq.inplane - 1e-9));
  s.n_slices = static_cast<int>(std::ceil(extent[a2] / acq.thickness - 1e-9));
  Mat3 axes = Mat3::Zero();
  axes(a0, 0) = 1.0;
  axes(a1, 1) = 1.0;
  axes(a2, 2) = 1.0;
  const Vec3 steps(acq.inplane, acq.inplane, acq.thickness);
  s.affine = Mat4::Identity();
  s.affine.topLeftCorner<3, 3>() = axes * steps.asDiagonal();
  const Vec3 half_index(0.5 * (s.nx - 1), 0.5 * (s.ny - 1), 0.5 * (s.n_slices - 1));
  s.affine.block<3, 1>(0, 3) = center - axes * steps.cwiseProduct(half_index);
  s.data.assign(s.size(), 0.0f);
  s.mask.assign(s.size(), 0);
  return s;
}

SimulatedStack simulate_stack(const VolumeGrid& gt, const AcquisitionParams& acq,
                              const MotionParams& motion, SliceAxis orientation, int stack_id,
                              int threads) {
  gt.validate();
  if (!(motion.rot_max_deg >= 0.0) || !(motion.trans_max_mm >= 0.0)) {
    throw InvalidParameter("simulate: motion bounds must be non-negative");
  }
  const Vec3 gt_spacing = gt.affine.topLeftCorner<3, 3>().colwise().norm().transpose();
  if (gt_spacing.maxCoeff() > acq.inplane + 1e-12) {
    throw InvalidParameter("simulate: ground-truth spacing must not exceed the in-plane resolution");
  }
  SimulatedStack out;
  out.stack = stack_geometry(gt, acq, orientation);
  SliceStack& s = out.stack;
  out.truth = SliceStates(static_cast<std::size_t>(s.n_slices));
  const PsfModel psf = build_psf(acq.inplane, acq.thickness, acq.inplane_fwhm_factor, acq.through_fwhm_factor);
  const Mat3 r_stack = s.rotation();
  const double deg = std::numbers::pi / 180.0;

  // Draw all motion first so the sequence does not depend on scheduling.
  for (int k = 0; k < s.n_slices; ++k) {
    std::mt19937_64 rng(stream_seed(motion.seed, stack_id, k, 1));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double rx = u(rng) * motion.rot_max_deg * deg;
    const double ry = u(rng) * motion.rot_max_deg * deg;
    const double rz = u(rng) * motion.rot_max_deg * deg;
    const Vec3 t(u(rng) * motion.trans_max_mm, u(rng) * motion.trans_max_mm, u(rng) * motion.trans_max_mm);
    const Mat3 r = (Eigen::AngleAxisd(rz, Vec3::UnitZ()) * Eigen::AngleAxisd(ry, Vec3::UnitY()) *
                    Eigen::AngleAxisd(rx, Vec3::UnitX()))
                       .toRotationMatrix();
    SliceState state;
    // The reconstruction keeps global slice 0 fixed, so it stays unmoved here too.
    if (stack_id != 0 || k != 0) {
      state.rotation = rotation_to_quat(r);
      state.translation = t;
    }
    out.truth.set(static_cast<std::size_t>(k), state);
  }

  parallel_for(
      static_cast<std::size_t>(s.n_slices),
      [&](std::size_t ks) {
        const int k = static_cast<int>(ks);
        const SliceState state = out.truth.get(ks);
        const Mat3 r = quat_to_rotation(state.rotation);
        const Mat3 r_eff = r * r_stack;
        std::mt19937_64 noise_rng(stream_seed(motion.seed, stack_id, k, 2));
        std::normal_distribution<double> noise(0.0, 1.0);
        for (int j = 0; j < s.ny; ++j) {
          for (int i = 0; i < s.nx; ++i) {
            const Vec3 x0 = lift_pixel(s, k, Vec2(i, j));
            const Vec3 x = r * x0 + state.translation;
            const auto [value, mask] = integrate_psf(gt, x, r_eff, psf, acq.samples_per_sigma);
            const std::size_t idx = s.index(i, j, k);
            const double eps = acq.noise_std > 0.0 ? acq.noise_std * noise(noise_rng) : 0.0;
            s.data[idx] = static_cast<float>(value + eps);
            s.mask[idx] = mask > acq.mask_threshold ? 1 : 0;
          }
        }
      },
      threads);
  return out;
}

}  // namespace gsvr
