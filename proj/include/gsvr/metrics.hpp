#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "gsvr/geometry.hpp"
#include "gsvr/motion.hpp"

namespace gsvr {

/// Reported PSNR for identical volumes.
inline constexpr double kPsnrCap = 99.0;

/// 10 log10(range^2 / MSE) over masked voxels, range = max - min of gt in the
/// mask. Capped at kPsnrCap. Throws InvalidParameter on shape mismatch or an
/// empty mask.
double psnr(const VolumeGrid& pred, const VolumeGrid& gt, std::span<const std::uint8_t> mask);

/// Mean local SSIM over masked voxels: 7^3 Gaussian window (sigma 1.5 voxels,
/// truncated and renormalized at the volume border), K1 = 0.01, K2 = 0.03.
/// The data range defaults to the gt range within the mask.
double ssim(const VolumeGrid& pred, const VolumeGrid& gt, std::span<const std::uint8_t> mask,
            std::optional<double> data_range = std::nullopt);

/// Local SSIM factors averaged over the mask, for diagnostics.
struct SsimTerms {
  double ssim = 0.0;
  double luminance = 0.0;          // (2 mu_x mu_y + C1) / (mu_x^2 + mu_y^2 + C1)
  double contrast_structure = 0.0;  // (2 s_xy + C2) / (s_x^2 + s_y^2 + C2)
};
SsimTerms ssim_terms(const VolumeGrid& pred, const VolumeGrid& gt,
                     std::span<const std::uint8_t> mask, std::optional<double> data_range = std::nullopt);

/// Pearson correlation over masked voxels. Throws UndefinedMetric when either
/// input has zero variance in the mask.
double ncc(const VolumeGrid& pred, const VolumeGrid& gt, std::span<const std::uint8_t> mask);

struct MotionError {
  double degrees = 0.0;
  double mm = 0.0;
};

/// Global rigid transform x -> R x + t.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

/// Per-slice rotation (geodesic angle) and translation errors after removing
/// the gauge: the global rigid transform G with estimated ~ G o truth,
/// fitted by least squares on the better-agreeing half of the slices. When
/// `observed` is given, slices flagged 0 take no part in the gauge fit (their
/// errors are still reported).
std::vector<MotionError> motion_error(const SliceStates& estimated, const SliceStates& truth,
                                      RigidTransform* gauge = nullptr,
                                      std::span<const std::uint8_t> observed = {});

/// Copy of the reference whose voxel centers are carried into the frame of a
/// reconstruction by `gauge` (the transform returned by motion_error).
VolumeGrid align_reference(const VolumeGrid& reference, const RigidTransform& gauge);

}  // namespace gsvr
