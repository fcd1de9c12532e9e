#include "gsvr/metrics.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace gsvr {

namespace {

void check_shapes(const VolumeGrid& a, const VolumeGrid& b, std::span<const std::uint8_t> mask) {
  if (a.nx != b.nx || a.ny != b.ny || a.nz != b.nz || a.data.size() != b.data.size()) {
    throw InvalidParameter("metric: volume shapes differ");
  }
  if (mask.size() != a.data.size()) throw InvalidParameter("metric: mask shape differs");
  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
    throw InvalidParameter("metric: empty mask");
  }
}

double masked_range(const VolumeGrid& gt, std::span<const std::uint8_t> mask) {
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    if (!mask[i]) continue;
    lo = std::min(lo, static_cast<double>(gt.data[i]));
    hi = std::max(hi, static_cast<double>(gt.data[i]));
  }
  return hi - lo;
}

// Separable Gaussian smoothing, weights renormalized where the window leaves
// the volume.
std::vector<double> smooth(const std::vector<double>& in, int nx, int ny, int nz) {
  constexpr int kRadius = 3;
  constexpr double kSigma = 1.5;
  double taps[2 * kRadius + 1];
  for (int t = -kRadius; t <= kRadius; ++t) taps[t + kRadius] = std::exp(-0.5 * t * t / (kSigma * kSigma));

  std::vector<double> a = in, b(in.size());
  const int dims[3] = {nx, ny, nz};
  const std::size_t strides[3] = {1, static_cast<std::size_t>(nx),
                                  static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny)};
  for (int axis = 0; axis < 3; ++axis) {
    for (int z = 0; z < nz; ++z) {
      for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) {
          const int pos[3] = {x, y, z};
          const std::size_t idx = x + strides[1] * y + strides[2] * z;
          double acc = 0.0, wsum = 0.0;
          for (int t = -kRadius; t <= kRadius; ++t) {
            const int p = pos[axis] + t;
            if (p < 0 || p >= dims[axis]) continue;
            const double w = taps[t + kRadius];
            acc += w * a[idx + static_cast<std::ptrdiff_t>(t) * static_cast<std::ptrdiff_t>(strides[axis])];
            wsum += w;
          }
          b[idx] = acc / wsum;
        }
      }
    }
    std::swap(a, b);
  }
  return a;
}

double geodesic_degrees(const Mat3& r) {
  const double s = 0.5 * Vec3(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)).norm();
  const double c = 0.5 * (r.trace() - 1.0);
  return std::atan2(s, c) * 180.0 / std::numbers::pi;
}

Mat3 project_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

RigidTransform fit_gauge(const std::vector<Mat3>& r_est, const std::vector<Vec3>& t_est,
                         const std::vector<Mat3>& r_true, const std::vector<Vec3>& t_true,
                         const std::vector<std::size_t>& use) {
  Mat3 acc = Mat3::Zero();
  for (std::size_t i : use) acc += r_est[i] * r_true[i].transpose();
  RigidTransform g;
  g.rotation = project_rotation(acc);
  Vec3 tsum = Vec3::Zero();
  for (std::size_t i : use) tsum += t_est[i] - g.rotation * t_true[i];
  g.translation = tsum / static_cast<double>(use.size());
  return g;
}

std::vector<MotionError> errors_under(const RigidTransform& g, const std::vector<Mat3>& r_est,
                                      const std::vector<Vec3>& t_est,
                                      const std::vector<Mat3>& r_true,
                                      const std::vector<Vec3>& t_true) {
  std::vector<MotionError> out(r_est.size());
  for (std::size_t i = 0; i < r_est.size(); ++i) {
    const Mat3 expected = g.rotation * r_true[i];
    out[i].degrees = geodesic_degrees(expected.transpose() * r_est[i]);
    out[i].mm = (t_est[i] - (g.rotation * t_true[i] + g.translation)).norm();
  }
  return out;
}

}  // namespace

double psnr(const VolumeGrid& pred, const VolumeGrid& gt, std::span<const std::uint8_t> mask) {
  check_shapes(pred, gt, mask);
  double sse = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    if (!mask[i]) continue;
    const double d = static_cast<double>(pred.data[i]) - static_cast<double>(gt.data[i]);
    sse += d * d;
    ++count;
  }
  const double mse = sse / static_cast<double>(count);
  if (mse == 0.0) return kPsnrCap;
  const double range = masked_range(gt, mask);
  if (!(range > 0.0)) throw UndefinedMetric("psnr: ground truth is constant within the mask");
  return std::min(kPsnrCap, 10.0 * std::log10(range * range / mse));
}

SsimTerms ssim_terms(const VolumeGrid& pred, const VolumeGrid& gt,
                     std::span<const std::uint8_t> mask, std::optional<double> data_range) {
  check_shapes(pred, gt, mask);
  const double range = data_range ? *data_range : masked_range(gt, mask);
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);

  const std::size_t n = gt.data.size();
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = pred.data[i];
    y[i] = gt.data[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = smooth(x, gt.nx, gt.ny, gt.nz);
  const auto my = smooth(y, gt.nx, gt.ny, gt.nz);
  const auto sxx = smooth(xx, gt.nx, gt.ny, gt.nz);
  const auto syy = smooth(yy, gt.nx, gt.ny, gt.nz);
  const auto sxy = smooth(xy, gt.nx, gt.ny, gt.nz);

  SsimTerms terms;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cov = sxy[i] - mx[i] * my[i];
    const double lum = (2.0 * mx[i] * my[i] + c1) / (mx[i] * mx[i] + my[i] * my[i] + c1);
    const double cs = (2.0 * cov + c2) / (vx + vy + c2);
    terms.luminance += lum;
    terms.contrast_structure += cs;
    terms.ssim += lum * cs;
    ++count;
  }
  const double inv = 1.0 / static_cast<double>(count);
  terms.ssim *= inv;
  terms.luminance *= inv;
  terms.contrast_structure *= inv;
  return terms;
}

double ssim(const VolumeGrid& pred, const VolumeGrid& gt, std::span<const std::uint8_t> mask,
            std::optional<double> data_range) {
  return ssim_terms(pred, gt, mask, data_range).ssim;
}

double ncc(const VolumeGrid& pred, const VolumeGrid& gt, std::span<const std::uint8_t> mask) {
  check_shapes(pred, gt, mask);
  double sa = 0, sb = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    if (!mask[i]) continue;
    sa += pred.data[i];
    sb += gt.data[i];
    ++count;
  }
  const double ma = sa / static_cast<double>(count), mb = sb / static_cast<double>(count);
  double cab = 0, caa = 0, cbb = 0;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    if (!mask[i]) continue;
    const double a = pred.data[i] - ma, b = gt.data[i] - mb;
    cab += a * b;
    caa += a * a;
    cbb += b * b;
  }
  if (!(caa > 0.0) || !(cbb > 0.0)) throw UndefinedMetric("ncc: zero variance within the mask");
  return std::clamp(cab / std::sqrt(caa * cbb), -1.0, 1.0);
}

std::vector<MotionError> motion_error(const SliceStates& estimated, const SliceStates& truth,
                                      RigidTransform* gauge, std::span<const std::uint8_t> observed) {
  const std::size_t n = estimated.count();
  if (truth.count() != n) throw InvalidParameter("motion_error: slice sets differ");
  if (!observed.empty() && observed.size() != n) throw InvalidParameter("motion_error: observed flags do not match");
  if (n == 0) return {};
  std::vector<Mat3> r_est(n), r_true(n);
  std::vector<Vec3> t_est(n), t_true(n);
  for (std::size_t i = 0; i < n; ++i) {
    const SliceState e = estimated.get(i), t = truth.get(i);
    r_est[i] = quat_to_rotation(e.rotation);
    r_true[i] = quat_to_rotation(t.rotation);
    t_est[i] = e.translation;
    t_true[i] = t.translation;
  }
  std::vector<std::size_t> all;
  for (std::size_t i = 0; i < n; ++i) {
    if (observed.empty() || observed[i]) all.push_back(i);
  }
  if (all.empty()) throw InvalidParameter("motion_error: no observed slices");
  RigidTransform g = fit_gauge(r_est, t_est, r_true, t_true, all);

  // Refit on the better-agreeing half so a few badly recovered slices do not
  // bias the gauge for everyone else.
  const auto first = errors_under(g, r_est, t_est, r_true, t_true);
  std::vector<double> score(n), sorted;
  for (std::size_t i : all) {
    score[i] = first[i].degrees + first[i].mm;
    sorted.push_back(score[i]);
  }
  const std::size_t mid = (sorted.size() - 1) / 2;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(mid), sorted.end());
  const double median = sorted[mid];
  std::vector<std::size_t> inliers;
  for (std::size_t i : all) {
    if (score[i] <= median) inliers.push_back(i);
  }
  g = fit_gauge(r_est, t_est, r_true, t_true, inliers);
  if (gauge) *gauge = g;
  return errors_under(g, r_est, t_est, r_true, t_true);
}

VolumeGrid align_reference(const VolumeGrid& reference, const RigidTransform& gauge) {
  Mat4 g = Mat4::Identity();
  g.block<3, 3>(0, 0) = gauge.rotation;
  g.block<3, 1>(0, 3) = gauge.translation;
  VolumeGrid out = reference;
  out.affine = g * reference.affine;
  return out;
}

}  // namespace gsvr
