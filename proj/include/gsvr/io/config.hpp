#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "gsvr/simulate.hpp"
#include "gsvr/train.hpp"

namespace gsvr::io {

/// Knobs of the `simulate` subcommand.
struct SimulateConfig {
  int size = 64;
  double spacing = 0.5;  // ground-truth voxel size, mm
  int stacks = 3;
  AcquisitionParams acquisition;
  MotionParams motion;
};

/// Every knob of the command-line tool.
///
/// JSON schema (all keys optional, unknown keys rejected):
///   seed                       integer, propagated to init/simulate seeds
///   delta                      mixture denominator stabilizer (fixed at 1e-8)
///   init     { n_gaussians, lambda_init, initial_scale, jitter }
///   loss     { lambda_reg, s_target, outlier_weighting }
///   optim    { epochs, top_k, knn_refresh, motion_warmup, optimize_motion,
///              point_budget, nonnegative_intensity, threads, metric_every,
///              coarse_stages [ { n_gaussians, scale, lambda_reg, epochs,
///                                rotation_lr, translation_lr } ],
///              lr { means, log_scales, quaternions, intensities,
///                   motion_rotation, motion_translation, log_sigma, eta },
///              schedule { factor, every },
///              adam { beta1, beta2, eps, weight_decay } }
///   psf      { inplane_fwhm_factor, through_fwhm_factor, enabled, mass_preserving }
///   simulate { size, spacing, stacks, inplane, thickness, noise_std,
///              samples_per_sigma, mask_threshold, rot_max_deg, trans_max_mm }
struct RunConfig {
  std::uint64_t seed = 0;
  double delta = 1e-8;
  FitConfig fit;
  SimulateConfig simulate;

  /// Copies `seed` into the init and motion seeds.
  void apply_seed(std::uint64_t s);
  void validate() const;
};

/// Throws InvalidParameter on malformed JSON, wrong types, unknown keys or
/// out-of-range values.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& cfg);

}  // namespace gsvr::io
