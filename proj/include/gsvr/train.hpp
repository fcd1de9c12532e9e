#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "gsvr/geometry.hpp"
#include "gsvr/init.hpp"
#include "gsvr/motion.hpp"
#include "gsvr/objective.hpp"
#include "gsvr/optim.hpp"

namespace gsvr {

/// Base learning rate of every parameter group.
struct LearningRates {
  double means = 2.5e-2;
  double log_scales = 2.5e-2;
  double quaternions = 1e-2;
  double intensities = 1e-2;
  double motion_rotation = 2.5e-3;
  double motion_translation = 1e-1;
  double log_sigma = 1e-2;
  double eta = 1e-2;
};

/// One low-capacity pass that only serves to estimate motion before the main
/// fit. The field of each stage is discarded; the slice states carry over.
struct CoarseStage {
  std::size_t n_gaussians = 500;
  double scale = 2.5;        // initial scale and s_target, mm
  double lambda_reg = 1.0;
  int epochs = 300;
  /// Motion learning rates of the stage (0 freezes that group).
  double rotation_lr = 0.0;
  double translation_lr = 1e-1;
};

struct OptimConfig {
  int epochs = 500;
  LearningRates lr;
  StepSchedule schedule;
  AdamWConfig adam;
  int knn_refresh = 50;
  std::size_t top_k = 50;
  /// Epochs before slice rotations/translations start to move.
  int motion_warmup = 10;
  bool optimize_motion = true;
  /// Samples per optimizer step; an epoch is split into chunks of whole slices.
  std::size_t point_budget = 10'000'000;
  /// Clamp intensities at zero after each step.
  bool nonnegative_intensity = false;
  int threads = 0;
  /// Evaluate PSNR/SSIM against the reference every this many epochs (0: never).
  int metric_every = 0;
  /// Run before the main fit when motion is optimized. Empty: start the main
  /// fit from identity motion.
  std::vector<CoarseStage> coarse_stages = {{500, 2.5, 1.0, 300, 0.0, 1e-1},
                                              {1500, 2.0, 0.3, 300, 2.5e-4, 1e-1}};

  void validate() const;
};

struct PsfConfig {
  double inplane_fwhm_factor = 1.2;
  double through_fwhm_factor = 1.0;
  /// false: zero PSF (ablation).
  bool enabled = true;
  /// See PsfModel::mass_preserving.
  bool mass_preserving = false;
};

struct FitConfig {
  InitConfig init;
  LossConfig loss;
  OptimConfig optim;
  PsfConfig psf;
};

/// One row per epoch.
struct HistoryRecord {
  int epoch = 0;
  double lr = 0.0;  // learning rate of the means group
  double loss_total = 0.0;
  double loss_data = 0.0;
  double loss_reg = 0.0;
  double loss_outlier = 0.0;
  double wall_seconds = 0.0;
  std::optional<double> psnr;
  std::optional<double> ssim;
};

/// Optional ground truth for metric tracking.
struct Reference {
  const VolumeGrid* volume = nullptr;  // must carry a mask
  /// True slice corrections. When set, each score first removes the global
  /// gauge between the current and the true motion.
  const SliceStates* truth = nullptr;
};

/// Optimizer state across epochs.
struct TrainState {
  AdamMoments means, log_scales, quaternions, intensities;
  AdamMoments rotations, translations;  // slices 1..S-1 (slice 0 is the anchor)
  AdamMoments log_sigma, eta;
  int epoch = 0;
  NeighborTable neighbors;
  std::vector<HistoryRecord> history;

  TrainState() = default;
  TrainState(std::size_t n_primitives, std::size_t n_slices);
};

/// PSF of each stack under the given convention.
std::vector<PsfModel> stack_psfs(const std::vector<SliceStack>& stacks, const PsfConfig& cfg);

/// Applies one AdamW update to all groups at the learning rates of `epoch`.
/// Motion groups are skipped when `motion_active` is false; slice 0 is the
/// gauge anchor and never moves.
void adamw_step(TrainState& state, GaussianField& field, SliceStates& slices,
                const Gradients& grads, const OptimConfig& cfg, int epoch, bool motion_active);

struct FitResult {
  GaussianField field;
  GaussianField initial_field;
  SliceStates states;
  std::vector<HistoryRecord> history;
  std::optional<double> initial_psnr, initial_ssim;
};

using EpochCallback = std::function<void(const HistoryRecord&)>;

/// Coarse motion stages (when motion is optimized), then initialization and
/// per epoch: neighbor refresh (every knn_refresh epochs), render, loss,
/// backward and AdamW step per chunk. History covers the main fit only;
/// wall_seconds includes the coarse stages. Throws TrainingDivergence when the
/// loss stops being finite.
/// `initial_states`, when given, replaces the identity starting motion.
FitResult fit(const std::vector<SliceStack>& stacks, const FitConfig& cfg,
              const Reference& reference = {}, const EpochCallback& on_epoch = {},
              const SliceStates* initial_states = nullptr);

/// Rasterize the field on the reference grid (masked) and score it.
std::pair<double, double> score_field(const GaussianField& field, const VolumeGrid& reference,
                                      std::size_t k);

}  // namespace gsvr
