#include "gsvr/init.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>
#include <string>

namespace gsvr {

void InitConfig::validate() const {
  if (n_gaussians == 0) throw InvalidParameter("InitConfig: n_gaussians must be positive");
  if (!(lambda_init >= 0.0 && lambda_init <= 1.0)) {
    throw InvalidParameter("InitConfig: lambda_init must lie in [0, 1]");
  }
  if (!(initial_scale > 0.0)) throw InvalidParameter("InitConfig: initial_scale must be positive");
}

std::vector<float> gradient_magnitude(const SliceStack& stack) {
  std::vector<float> out(stack.size(), 0.0f);
  for (int k = 0; k < stack.n_slices; ++k) {
    for (int j = 0; j < stack.ny; ++j) {
      for (int i = 0; i < stack.nx; ++i) {
        const std::size_t idx = stack.index(i, j, k);
        if (!stack.mask[idx]) continue;
        const double gx = 0.5 * (stack.data[stack.index(std::min(i + 1, stack.nx - 1), j, k)] -
                                 stack.data[stack.index(std::max(i - 1, 0), j, k)]);
        const double gy = 0.5 * (stack.data[stack.index(i, std::min(j + 1, stack.ny - 1), k)] -
                                 stack.data[stack.index(i, std::max(j - 1, 0), k)]);
        out[idx] = static_cast<float>(std::sqrt(gx * gx + gy * gy));
      }
    }
  }
  return out;
}

InitSamples sample_init_positions(const std::vector<SliceStack>& stacks, const InitConfig& cfg) {
  cfg.validate();
  std::vector<PixelRef> pixels;
  std::vector<double> cdf;
  std::vector<double> uniform_cdf;
  double mass = 0.0;
  for (std::size_t s = 0; s < stacks.size(); ++s) {
    const SliceStack& stack = stacks[s];
    stack.validate();
    const std::vector<float> grad = gradient_magnitude(stack);
    for (int k = 0; k < stack.n_slices; ++k) {
      for (int j = 0; j < stack.ny; ++j) {
        for (int i = 0; i < stack.nx; ++i) {
          const std::size_t idx = stack.index(i, j, k);
          if (!stack.mask[idx]) continue;
          mass += (1.0 - cfg.lambda_init) * grad[idx] + cfg.lambda_init;
          pixels.push_back({static_cast<int>(s), k, i, j});
          cdf.push_back(mass);
        }
      }
    }
  }
  if (pixels.empty()) throw InvalidParameter("sample_init_positions: no masked pixels");

  InitSamples out;
  if (!(mass > 0.0)) {
    std::cerr << "warning: initialization gradient mass is zero; sampling uniformly\n";
    out.uniform_fallback = true;
    for (std::size_t p = 0; p < cdf.size(); ++p) cdf[p] = static_cast<double>(p + 1);
    mass = static_cast<double>(cdf.size());
  }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  out.positions.reserve(cfg.n_gaussians);
  out.sources.reserve(cfg.n_gaussians);
  for (std::size_t n = 0; n < cfg.n_gaussians; ++n) {
    const double target = unit(rng) * mass;
    // First pixel whose cumulative mass exceeds the target: zero-mass pixels
    // are never selected.
    auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
    if (it == cdf.end()) --it;
    const PixelRef ref = pixels[static_cast<std::size_t>(it - cdf.begin())];
    Eigen::Vector4d index(ref.i, ref.j, ref.slice, 1.0);
    if (cfg.jitter) {
      index.x() += unit(rng) - 0.5;
      index.y() += unit(rng) - 0.5;
      index.z() += unit(rng) - 0.5;
    }
    out.positions.push_back((stacks[static_cast<std::size_t>(ref.stack)].affine * index).head<3>());
    out.sources.push_back(ref);
  }
  return out;
}

GaussianField init_field(const InitSamples& samples, const std::vector<SliceStack>& stacks,
                         const InitConfig& cfg) {
  cfg.validate();
  if (samples.positions.size() != samples.sources.size() || samples.positions.empty()) {
    throw InvalidParameter("init_field: positions and sources must be non-empty and aligned");
  }
  GaussianField field(samples.positions.size());
  const double log_s = std::log(cfg.initial_scale);
  for (std::size_t j = 0; j < samples.positions.size(); ++j) {
    if (!samples.positions[j].allFinite()) {
      throw InvalidParameter("init_field: non-finite position " + std::to_string(j));
    }
    field.set_mean(j, samples.positions[j]);
    field.set_log_scale(j, Vec3::Constant(log_s));
    const PixelRef& ref = samples.sources[j];
    const SliceStack& stack = stacks.at(static_cast<std::size_t>(ref.stack));
    field.intensities[j] = stack.data[stack.index(ref.i, ref.j, ref.slice)];
  }
  return field;
}

}  // namespace gsvr
