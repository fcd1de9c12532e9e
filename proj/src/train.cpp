#include "gsvr/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>

#include "gsvr/metrics.hpp"

namespace gsvr {

void OptimConfig::validate() const {
  if (epochs <= 0) throw InvalidParameter("OptimConfig: epochs must be positive");
  const double rates[] = {lr.means, lr.log_scales, lr.quaternions, lr.intensities, lr.log_sigma, lr.eta};
  for (double r : rates) {
    if (!(r > 0.0)) throw InvalidParameter("OptimConfig: learning rates must be positive");
  }
  if (!(lr.motion_rotation >= 0.0) || !(lr.motion_translation >= 0.0)) {
    throw InvalidParameter("OptimConfig: motion learning rates must be >= 0");
  }
  for (const CoarseStage& st : coarse_stages) {
    if (st.n_gaussians == 0 || st.epochs <= 0 || !(st.scale > 0.0) || !(st.lambda_reg >= 0.0) ||
        !(st.rotation_lr >= 0.0) || !(st.translation_lr >= 0.0)) {
      throw InvalidParameter("OptimConfig: invalid coarse stage");
    }
  }
  if (knn_refresh <= 0) throw InvalidParameter("OptimConfig: knn_refresh must be positive");
  if (top_k == 0) throw InvalidParameter("OptimConfig: top_k must be positive");
  if (point_budget == 0) throw InvalidParameter("OptimConfig: point_budget must be positive");
  if (motion_warmup < 0 || metric_every < 0) throw InvalidParameter("OptimConfig: negative count");
}

TrainState::TrainState(std::size_t n, std::size_t s)
    : means(3 * n), log_scales(3 * n), quaternions(4 * n), intensities(n),
      rotations(4 * (s > 0 ? s - 1 : 0)), translations(3 * (s > 0 ? s - 1 : 0)),
      log_sigma(s), eta(s) {}

std::vector<PsfModel> stack_psfs(const std::vector<SliceStack>& stacks, const PsfConfig& cfg) {
  std::vector<PsfModel> out;
  out.reserve(stacks.size());
  for (const SliceStack& s : stacks) {
    if (cfg.enabled) {
      out.push_back(build_psf(s.inplane_spacing, s.thickness, cfg.inplane_fwhm_factor,
                              cfg.through_fwhm_factor));
    } else {
      out.push_back(PsfModel{});
    }
    out.back().mass_preserving = cfg.mass_preserving;
  }
  return out;
}

void adamw_step(TrainState& state, GaussianField& field, SliceStates& slices,
                const Gradients& grads, const OptimConfig& cfg, int epoch, bool motion_active) {
  auto rate = [&](double base) { return lr_at(epoch, base, cfg.schedule); };
  adamw_update(field.means, grads.means, state.means, rate(cfg.lr.means), cfg.adam);
  adamw_update(field.log_scales, grads.log_scales, state.log_scales, rate(cfg.lr.log_scales), cfg.adam);
  adamw_update(field.quaternions, grads.quaternions, state.quaternions, rate(cfg.lr.quaternions), cfg.adam);
  adamw_update(field.intensities, grads.intensities, state.intensities, rate(cfg.lr.intensities), cfg.adam);
  adamw_update(slices.log_sigma, grads.log_sigma, state.log_sigma, rate(cfg.lr.log_sigma), cfg.adam);
  adamw_update(slices.eta, grads.eta, state.eta, rate(cfg.lr.eta), cfg.adam);
  if (motion_active && slices.count() > 1) {
    // Slice 0 anchors the global pose: update only slices 1..S-1.
    const auto rot = std::span<double>(slices.rotations).subspan(4);
    const auto trans = std::span<double>(slices.translations).subspan(3);
    const auto g_rot = std::span<const double>(grads.rotations).subspan(4);
    const auto g_trans = std::span<const double>(grads.translations).subspan(3);
    if (cfg.lr.motion_rotation > 0.0) {
      adamw_update(rot, g_rot, state.rotations, rate(cfg.lr.motion_rotation), cfg.adam);
    }
    if (cfg.lr.motion_translation > 0.0) {
      adamw_update(trans, g_trans, state.translations, rate(cfg.lr.motion_translation), cfg.adam);
    }
  }

  // Keep scales above the covariance eigenvalue floor.
  const double min_log_scale = 0.5 * std::log(kEigenFloor) + 1e-6;
  for (double& s : field.log_scales) s = std::max(s, min_log_scale);
  if (cfg.nonnegative_intensity) {
    for (double& c : field.intensities) c = std::max(c, 0.0);
  }
}

std::pair<double, double> score_field(const GaussianField& field, const VolumeGrid& reference,
                                      std::size_t k) {
  if (!reference.has_mask()) throw InvalidParameter("score_field: reference needs a mask");
  const VolumeGrid pred = rasterize(field, reference, std::min(k, field.count()));
  return {psnr(pred, reference, reference.mask), ssim(pred, reference, reference.mask)};
}

namespace {

// Consecutive slice ranges whose point totals stay within the budget.
std::vector<std::pair<std::size_t, std::size_t>> make_chunks(const TrainingData& data,
                                                             std::size_t budget) {
  std::vector<std::pair<std::size_t, std::size_t>> chunks;
  std::size_t begin = 0, points = 0;
  for (std::size_t s = 0; s < data.slices.size(); ++s) {
    const std::size_t m = data.slices[s].lifted.size();
    if (s > begin && points + m > budget) {
      chunks.emplace_back(begin, s);
      begin = s;
      points = 0;
    }
    points += m;
  }
  chunks.emplace_back(begin, data.slices.size());
  return chunks;
}


using Clock = std::chrono::steady_clock;

FitResult fit_stage(const std::vector<SliceStack>& stacks, const FitConfig& cfg,
                    const Reference& reference, const EpochCallback& on_epoch,
                    const SliceStates* initial_states, Clock::time_point start) {
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  FitResult result;
  const InitSamples samples = sample_init_positions(stacks, cfg.init);
  result.field = init_field(samples, stacks, cfg.init);
  result.initial_field = result.field;
  result.states = init_states(stacks);
  if (initial_states) {
    if (initial_states->count() != result.states.count()) {
      throw InvalidParameter("fit: initial states do not match the slice count");
    }
    result.states = *initial_states;
  }
  const std::size_t k = std::min(cfg.optim.top_k, result.field.count());

  const TrainingData data = make_training_data(stacks, stack_psfs(stacks, cfg.psf));
  const std::size_t total_points = data.total_points();
  if (total_points == 0) throw InvalidParameter("fit: stacks contain no masked pixels");
  const auto chunks = make_chunks(data, cfg.optim.point_budget);

  const VolumeGrid* ref = reference.volume;
  const std::vector<std::uint8_t> observed = observed_slices(stacks);
  auto score = [&] {
    if (!reference.truth) return score_field(result.field, *ref, k);
    RigidTransform gauge;
    motion_error(result.states, *reference.truth, &gauge, observed);
    return score_field(result.field, align_reference(*ref, gauge), k);
  };
  if (ref && cfg.optim.metric_every > 0) {
    auto [p, s] = score();
    result.initial_psnr = p;
    result.initial_ssim = s;
  }

  TrainState state(result.field.count(), result.states.count());
  for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    state.epoch = epoch;
    if (epoch % cfg.optim.knn_refresh == 0) {
      state.neighbors = refresh_neighbors(data, result.field, result.states, k, epoch, cfg.optim.threads);
    }
    const bool motion_active = cfg.optim.optimize_motion && epoch >= cfg.optim.motion_warmup;

    HistoryRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at(epoch, cfg.optim.lr.means, cfg.optim.schedule);
    for (const auto& [begin, end] : chunks) {
      std::size_t chunk_points = 0;
      for (std::size_t s = begin; s < end; ++s) chunk_points += data.slices[s].lifted.size();
      ObjectiveOptions opt;
      opt.slice_begin = begin;
      opt.slice_end = end;
      opt.reg_weight = static_cast<double>(chunk_points) / static_cast<double>(total_points);
      opt.threads = cfg.optim.threads;
      Gradients grads;
      const LossTerms terms = backward(data, state.neighbors, result.field, result.states, cfg.loss, grads, opt);
      if (!std::isfinite(terms.total())) {
        throw TrainingDivergence("loss became non-finite at epoch " + std::to_string(epoch), -1);
      }
      rec.loss_data += terms.data;
      rec.loss_reg += terms.reg;
      rec.loss_outlier += terms.outlier;
      adamw_step(state, result.field, result.states, grads, cfg.optim, epoch, motion_active);
    }
    rec.loss_total = rec.loss_data + rec.loss_reg + rec.loss_outlier;

    const bool last = epoch + 1 == cfg.optim.epochs;
    if (ref && cfg.optim.metric_every > 0 && (epoch % cfg.optim.metric_every == 0 || last)) {
      auto [p, s] = score();
      rec.psnr = p;
      rec.ssim = s;
    }
    rec.wall_seconds = elapsed();
    state.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.history = std::move(state.history);
  return result;
}

}  // namespace

FitResult fit(const std::vector<SliceStack>& stacks, const FitConfig& cfg,
              const Reference& reference, const EpochCallback& on_epoch,
              const SliceStates* initial_states) {
  if (stacks.empty()) throw InvalidParameter("fit: need at least one stack");
  cfg.loss.validate();
  cfg.optim.validate();
  cfg.init.validate();
  const auto start = Clock::now();

  std::optional<SliceStates> states;
  if (initial_states) states = *initial_states;
  if (cfg.optim.optimize_motion) {
    for (std::size_t i = 0; i < cfg.optim.coarse_stages.size(); ++i) {
      const CoarseStage& st = cfg.optim.coarse_stages[i];
      FitConfig stage = cfg;
      stage.init.n_gaussians = st.n_gaussians;
      stage.init.initial_scale = st.scale;
      stage.init.seed = cfg.init.seed + 1 + i;
      stage.loss.s_target = st.scale;
      stage.loss.lambda_reg = st.lambda_reg;
      stage.optim.epochs = st.epochs;
      stage.optim.lr.motion_rotation = st.rotation_lr;
      stage.optim.lr.motion_translation = st.translation_lr;
      stage.optim.metric_every = 0;
      if (i > 0) stage.optim.motion_warmup = 0;
      states = fit_stage(stacks, stage, {}, {}, states ? &*states : nullptr, start).states;
    }
  }
  FitConfig main = cfg;
  if (states && cfg.optim.optimize_motion && !cfg.optim.coarse_stages.empty()) main.optim.motion_warmup = 0;
  return fit_stage(stacks, main, reference, on_epoch, states ? &*states : nullptr, start);
}

}  // namespace gsvr
