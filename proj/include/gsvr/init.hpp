#pragma once

#include <cstdint>
#include <vector>

#include "gsvr/geometry.hpp"
#include "gsvr/motion.hpp"

namespace gsvr {

struct InitConfig {
  std::size_t n_gaussians = 50000;
  /// Mix between gradient-driven (0) and uniform (1) sampling.
  double lambda_init = 0.0;
  std::uint64_t seed = 0;
  double initial_scale = 1.6;  // mm, isotropic
  /// Spread each draw uniformly over its pixel footprint (in-plane pixel and
  /// slice thickness). Off: positions are exact pixel centers.
  bool jitter = true;

  void validate() const;
};

/// 2D central-difference gradient magnitude per pixel (pixel units), zero
/// outside the mask. Same layout as the stack data.
std::vector<float> gradient_magnitude(const SliceStack& stack);

struct PixelRef {
  int stack = 0;
  int slice = 0;
  int i = 0, j = 0;
};

struct InitSamples {
  std::vector<Vec3> positions;
  std::vector<PixelRef> sources;
  /// True when the gradient mass was zero and sampling fell back to uniform.
  bool uniform_fallback = false;
};

/// Draws N masked pixels (with replacement) with probability proportional to
/// (1 - lambda) |grad I| + lambda, pooled over all stacks, and lifts them to
/// world space.
InitSamples sample_init_positions(const std::vector<SliceStack>& stacks, const InitConfig& cfg);

/// Means at the sampled positions, isotropic initial scale, identity
/// rotations and the source pixel intensity.
GaussianField init_field(const InitSamples& samples, const std::vector<SliceStack>& stacks,
                         const InitConfig& cfg);

}  // namespace gsvr
