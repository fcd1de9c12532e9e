#include "gsvr/objective.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gsvr/knn_index.hpp"
#include "gsvr/parallel.hpp"

namespace gsvr {

void LossConfig::validate() const {
  if (!(lambda_reg >= 0.0)) throw InvalidParameter("LossConfig: lambda_reg must be >= 0");
  if (!(s_target > 0.0)) throw InvalidParameter("LossConfig: s_target must be > 0");
}

std::size_t TrainingData::total_points() const {
  std::size_t n = 0;
  for (const auto& s : slices) n += s.lifted.size();
  return n;
}

TrainingData make_training_data(const std::vector<SliceStack>& stacks,
                                const std::vector<PsfModel>& psf) {
  if (psf.size() != stacks.size()) {
    throw InvalidParameter("make_training_data: need one PSF per stack");
  }
  const auto offsets = slice_offsets(stacks);
  TrainingData data;
  data.slices.resize(offsets.back());
  for (std::size_t s = 0; s < stacks.size(); ++s) {
    const SliceStack& stack = stacks[s];
    stack.validate();
    const Mat3 r_stack = stack.rotation();
    for (int k = 0; k < stack.n_slices; ++k) {
      SliceSamples& out = data.slices[offsets[s] + static_cast<std::size_t>(k)];
      out.slice = offsets[s] + static_cast<std::size_t>(k);
      out.stack = static_cast<int>(s);
      out.stack_rotation = r_stack;
      out.psf = psf[s];
      for (int j = 0; j < stack.ny; ++j) {
        for (int i = 0; i < stack.nx; ++i) {
          const std::size_t idx = stack.index(i, j, k);
          if (!stack.mask[idx]) continue;
          out.lifted.push_back(lift_pixel(stack, k, Vec2(i, j)));
          out.observed.push_back(stack.data[idx]);
        }
      }
    }
  }
  return data;
}

std::vector<Vec3> corrected_points(const SliceSamples& slice, const SliceState& state) {
  const Mat3 r = quat_to_rotation(state.rotation);
  std::vector<Vec3> out(slice.lifted.size());
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = r * slice.lifted[p] + state.translation;
  return out;
}

SliceNeighbors compact_neighbors(const NeighborIds& ids) {
  SliceNeighbors out;
  out.k = ids.k;
  out.unique = ids.ids;
  std::sort(out.unique.begin(), out.unique.end());
  out.unique.erase(std::unique(out.unique.begin(), out.unique.end()), out.unique.end());
  out.local.resize(ids.ids.size());
  for (std::size_t i = 0; i < ids.ids.size(); ++i) {
    const auto it = std::lower_bound(out.unique.begin(), out.unique.end(), ids.ids[i]);
    out.local[i] = static_cast<std::uint32_t>(it - out.unique.begin());
  }
  return out;
}

NeighborTable refresh_neighbors(const TrainingData& data, const GaussianField& field,
                                const SliceStates& states, std::size_t k, long epoch,
                                int threads) {
  const NeighborIndex index = NeighborIndex::build(field.means, k, epoch);
  NeighborTable table;
  table.epoch = epoch;
  table.slices.resize(data.slices.size());
  parallel_for(
      data.slices.size(),
      [&](std::size_t s) {
        const SliceSamples& slice = data.slices[s];
        const std::vector<Vec3> x = corrected_points(slice, states.get(slice.slice));
        table.slices[s] = compact_neighbors(index.query(x, k));
        table.slices[s].k = k;
      },
      threads);
  return table;
}

Gradients::Gradients(std::size_t n, std::size_t s)
    : means(3 * n, 0.0),
      log_scales(3 * n, 0.0),
      quaternions(4 * n, 0.0),
      intensities(n, 0.0),
      rotations(4 * s, 0.0),
      translations(3 * s, 0.0),
      log_sigma(s, 0.0),
      eta(s, 0.0) {}

namespace {

// Contribution of one slice, reduced into the global gradients afterwards.
struct SliceResult {
  double data = 0.0;
  double abs_residual = 0.0;
  double outlier = 0.0;
  std::size_t points = 0;
  // Local (per unique primitive) accumulators.
  std::vector<double> d_mean;   // 3U
  std::vector<double> d_int;    // U
  std::vector<Sym3> d_sigma;    // U, dL/dSigma_j
  Quat d_rot = Quat::Zero();
  Vec3 d_trans = Vec3::Zero();
  double d_log_sigma = 0.0;
  double d_eta = 0.0;
};

inline double sign_of(double r) { return r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0); }

// -A G A for symmetric A, G.
Sym3 scaled(const Sym3& a, double f) {
  return {a.xx * f, a.xy * f, a.xz * f, a.yy * f, a.yz * f, a.zz * f};
}

Sym3 sandwich_neg(const Sym3& a, const Sym3& g) {
  const Mat3 am = a.full();
  return Sym3::from(-(am * g.full() * am));
}

void evaluate_slice(const SliceSamples& slice, const SliceNeighbors& nb,
                    const std::vector<Sym3>& sigma, const GaussianField& field,
                    const SliceState& state, const LossConfig& cfg, bool want_grad,
                    SliceResult& out, std::vector<double>* predictions) {
  const std::size_t m = slice.lifted.size();
  out.points = m;
  if (predictions) predictions->assign(m, 0.0);
  if (m == 0) return;
  const std::size_t k = nb.k;
  const std::size_t u_count = nb.unique.size();
  if (nb.local.size() != m * k) {
    throw InvalidParameter("objective: neighbor table does not match samples of slice " +
                           std::to_string(slice.slice));
  }

  const Mat3 r_corr = quat_to_rotation(state.rotation);
  const Mat3 r_eff = r_corr * slice.stack_rotation;
  const Sym3 psf_world = slice.psf.rotated(r_eff);
  const double scale = std::exp(state.log_sigma);
  const double omega = cfg.outlier_weighting ? std::exp(-state.eta) : 1.0;

  // Inverse observed covariance per referenced primitive, shared by all
  // samples of the slice (they share the PSF orientation).
  std::vector<Sym3> inv(u_count);
  std::vector<Vec3> mu(u_count);
  std::vector<double> c(u_count);
  std::vector<double> amp(u_count, 1.0);
  for (std::size_t u = 0; u < u_count; ++u) {
    const std::uint32_t j = nb.unique[u];
    const Sym3 obs = sigma[j] + psf_world;
    inv[u] = obs.inverse();
    if (slice.psf.mass_preserving) amp[u] = std::sqrt(sigma[j].determinant() / obs.determinant());
    mu[u] = field.mean(j);
    c[u] = field.intensities[j];
  }

  std::vector<Sym3> grad_inv;
  std::vector<double> grad_log_amp;
  if (want_grad) {
    out.d_mean.assign(3 * u_count, 0.0);
    out.d_int.assign(u_count, 0.0);
    grad_inv.assign(u_count, Sym3{});
    if (slice.psf.mass_preserving) grad_log_amp.assign(u_count, 0.0);
  }

  std::vector<double> w(k);
  std::vector<std::uint8_t> clamped(k);
  Vec3 d_trans = Vec3::Zero();
  Mat3 d_rcorr = Mat3::Zero();

  for (std::size_t p = 0; p < m; ++p) {
    const Vec3 x = r_corr * slice.lifted[p] + state.translation;
    const std::uint32_t* row = nb.local.data() + p * k;
    double num = 0.0, den = 0.0;
    for (std::size_t q = 0; q < k; ++q) {
      const std::uint32_t u = row[q];
      const Vec3 v = x - mu[u];
      double e = 0.5 * inv[u].quad(v);
      clamped[q] = e > kMaxExponent;
      if (clamped[q]) e = kMaxExponent;
      w[q] = amp[u] * std::exp(-e);
      num += c[row[q]] * w[q];
      den += w[q];
    }
    const double den_d = den + kMixtureDelta;
    const double value = num / den_d;
    const double pred = scale * value;
    if (!std::isfinite(pred)) {
      throw TrainingDivergence("non-finite render in slice " + std::to_string(slice.slice),
                               static_cast<long>(slice.slice));
    }
    if (predictions) (*predictions)[p] = pred;
    const double r = slice.observed[p] - pred;
    out.abs_residual += std::abs(r);
    if (!want_grad) continue;

    const double g_pred = -sign_of(r) * omega;  // dL/dI_hat
    out.d_log_sigma += g_pred * pred;
    const double g_value = g_pred * scale;
    if (g_value == 0.0) continue;
    Vec3 d_x = Vec3::Zero();
    for (std::size_t q = 0; q < k; ++q) {
      const std::uint32_t u = row[q];
      out.d_int[u] += g_value * w[q] / den_d;
      const double g_w = g_value * (c[u] - value) / den_d;
      if (!grad_log_amp.empty()) grad_log_amp[u] += g_w * w[q];
      if (clamped[q]) continue;
      const double g_e = -g_w * w[q];  // dL/de, e = 0.5 v^T A v
      const Vec3 v = x - mu[u];
      const Vec3 av = inv[u].apply(v);
      const Vec3 g_v = g_e * av;
      d_x += g_v;
      out.d_mean[3 * u] -= g_v.x();
      out.d_mean[3 * u + 1] -= g_v.y();
      out.d_mean[3 * u + 2] -= g_v.z();
      const double h = 0.5 * g_e;
      Sym3& ga = grad_inv[u];
      ga.xx += h * v.x() * v.x();
      ga.xy += h * v.x() * v.y();
      ga.xz += h * v.x() * v.z();
      ga.yy += h * v.y() * v.y();
      ga.yz += h * v.y() * v.z();
      ga.zz += h * v.z() * v.z();
    }
    d_trans += d_x;
    d_rcorr += d_x * slice.lifted[p].transpose();
  }

  out.data = omega * out.abs_residual;
  if (cfg.outlier_weighting) out.outlier = static_cast<double>(m) * state.eta;
  if (!want_grad) return;

  // Through the inversion: Sigma_obs = Sigma_j + P, dL/dSigma_obs = -A G A.
  out.d_sigma.resize(u_count);
  Mat3 d_psf = Mat3::Zero();
  for (std::size_t u = 0; u < u_count; ++u) {
    Sym3 d_obs = sandwich_neg(inv[u], grad_inv[u]);
    Sym3 d_sig = d_obs;
    if (!grad_log_amp.empty()) {
      // log amp = 0.5 (log det Sigma_j - log det Sigma_obs)
      const double h = 0.5 * grad_log_amp[u];
      const Sym3 inv_j = sigma[nb.unique[u]].inverse();
      d_obs = d_obs + scaled(inv[u], -h);
      d_sig = d_obs + scaled(inv_j, h);
    }
    out.d_sigma[u] = d_sig;
    d_psf += d_obs.full();
  }
  // P = R_eff diag(sigma_psf^2) R_eff^T, R_eff = R_corr R_stack.
  const Vec3 var = slice.psf.sigma.cwiseProduct(slice.psf.sigma);
  const Mat3 d_reff = 2.0 * d_psf * r_eff * var.asDiagonal();
  d_rcorr += d_reff * slice.stack_rotation.transpose();
  out.d_rot = quat_rotation_backward(state.rotation, d_rcorr);
  out.d_trans = d_trans;
  if (cfg.outlier_weighting) out.d_eta = -out.data + static_cast<double>(m);
}

LossTerms run_objective(const TrainingData& data, const NeighborTable& neighbors,
                        const GaussianField& field, const SliceStates& states,
                        const LossConfig& cfg, Gradients* grads, const ObjectiveOptions& opt) {
  cfg.validate();
  const std::size_t n = field.count();
  const std::size_t n_slices = data.slices.size();
  if (neighbors.slices.size() != n_slices) {
    throw InvalidParameter("objective: neighbor table has wrong slice count");
  }
  if (states.count() != n_slices) throw InvalidParameter("objective: state count mismatch");
  const std::size_t begin = std::min(opt.slice_begin, n_slices);
  const std::size_t end = std::min(opt.slice_end, n_slices);

  std::vector<Sym3> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (std::exp(2.0 * field.log_scale(j).minCoeff()) < kEigenFloor) {
      throw NumericalDegeneracy("primitive " + std::to_string(j) + " below eigenvalue floor", j);
    }
    sigma[j] = field.covariance(j);
  }

  const bool want_grad = grads != nullptr;
  std::vector<SliceResult> results(end - begin);
  if (opt.predictions) opt.predictions->assign(n_slices, {});
  parallel_for(
      end - begin,
      [&](std::size_t t) {
        const std::size_t s = begin + t;
        evaluate_slice(data.slices[s], neighbors.slices[s], sigma, field,
                       states.get(data.slices[s].slice), cfg, want_grad, results[t],
                       opt.predictions ? &(*opt.predictions)[s] : nullptr);
      },
      opt.threads);

  LossTerms terms;
  std::vector<Sym3> d_sigma;
  if (want_grad) {
    *grads = Gradients(n, n_slices);
    d_sigma.assign(n, Sym3{});
  }
  // Ordered reduction.
  for (std::size_t t = 0; t < results.size(); ++t) {
    const SliceResult& r = results[t];
    const std::size_t s = begin + t;
    terms.data += r.data;
    terms.outlier += r.outlier;
    terms.points += r.points;
    if (!want_grad || r.points == 0) continue;
    const SliceNeighbors& nb = neighbors.slices[s];
    for (std::size_t u = 0; u < nb.unique.size(); ++u) {
      const std::uint32_t j = nb.unique[u];
      for (int a = 0; a < 3; ++a) grads->means[3 * j + a] += r.d_mean[3 * u + a];
      grads->intensities[j] += r.d_int[u];
      d_sigma[j] = d_sigma[j] + r.d_sigma[u];
    }
    const std::size_t id = data.slices[s].slice;
    for (int a = 0; a < 4; ++a) grads->rotations[4 * id + a] += r.d_rot[a];
    for (int a = 0; a < 3; ++a) grads->translations[3 * id + a] += r.d_trans[a];
    grads->log_sigma[id] += r.d_log_sigma;
    grads->eta[id] += r.d_eta;
  }

  // Regularizer and chain rule from Sigma_j to (log_s, q).
  const double lambda = cfg.lambda_reg * opt.reg_weight;
  for (std::size_t j = 0; j < n; ++j) {
    const Vec3 ls = field.log_scale(j);
    const Vec3 s = ls.array().exp();
    for (int a = 0; a < 3; ++a) {
      const double diff = s[a] - cfg.s_target;
      terms.reg += lambda * diff * diff;
      if (want_grad) grads->log_scales[3 * j + a] += 2.0 * lambda * diff * s[a];
    }
    if (!want_grad) continue;
    const Sym3& g = d_sigma[j];
    if (g.xx == 0 && g.xy == 0 && g.xz == 0 && g.yy == 0 && g.yz == 0 && g.zz == 0) continue;
    const Quat q = field.quaternion(j);
    const Mat3 r = quat_to_rotation(q);
    const Mat3 gm = g.full();
    const Vec3 var = s.cwiseProduct(s);
    const Mat3 rtgr = r.transpose() * gm * r;
    for (int a = 0; a < 3; ++a) grads->log_scales[3 * j + a] += 2.0 * var[a] * rtgr(a, a);
    const Mat3 d_r = 2.0 * gm * r * var.asDiagonal();
    const Quat dq = quat_rotation_backward(q, d_r);
    for (int a = 0; a < 4; ++a) grads->quaternions[4 * j + a] += dq[a];
  }
  return terms;
}

}  // namespace

LossTerms compute_loss(const TrainingData& data, const NeighborTable& neighbors,
                       const GaussianField& field, const SliceStates& states,
                       const LossConfig& cfg, const ObjectiveOptions& opt) {
  return run_objective(data, neighbors, field, states, cfg, nullptr, opt);
}

LossTerms backward(const TrainingData& data, const NeighborTable& neighbors,
                   const GaussianField& field, const SliceStates& states, const LossConfig& cfg,
                   Gradients& grads, const ObjectiveOptions& opt) {
  return run_objective(data, neighbors, field, states, cfg, &grads, opt);
}

}  // namespace gsvr
