#pragma once

#include <cstdint>
#include <vector>

#include "gsvr/forward_model.hpp"
#include "gsvr/geometry.hpp"
#include "gsvr/motion.hpp"

namespace gsvr {

/// Weights of the training objective.
struct LossConfig {
  double lambda_reg = 2.5e-3;
  double s_target = 1.6;  // mm, isotropic
  /// Replaces the data term of slice i by sum|r| exp(-eta_i) + n_i eta_i.
  bool outlier_weighting = false;

  void validate() const;
};

/// Masked pixels of one slice, lifted to world space before correction.
struct SliceSamples {
  std::size_t slice = 0;
  int stack = 0;
  Mat3 stack_rotation = Mat3::Identity();
  PsfModel psf;
  std::vector<Vec3> lifted;
  std::vector<double> observed;
};

/// All training samples, one entry per global slice (entries may be empty).
struct TrainingData {
  std::vector<SliceSamples> slices;

  std::size_t total_points() const;
};

/// Builds the sample set from the stacks' masks. `psf` holds one model per stack.
TrainingData make_training_data(const std::vector<SliceStack>& stacks,
                                const std::vector<PsfModel>& psf);

/// Frozen Top-K sets for one slice, stored as a compact local table: `unique`
/// lists the global primitive ids referenced by the slice and `local` holds
/// M x K positions into `unique`.
struct SliceNeighbors {
  std::size_t k = 0;
  std::vector<std::uint32_t> unique;
  std::vector<std::uint32_t> local;
};

struct NeighborTable {
  std::vector<SliceNeighbors> slices;
  long epoch = 0;
};

/// Motion-corrected world position of every sample of `slice`.
std::vector<Vec3> corrected_points(const SliceSamples& slice, const SliceState& state);

/// Queries the K nearest means for every corrected sample position.
NeighborTable refresh_neighbors(const TrainingData& data, const GaussianField& field,
                                const SliceStates& states, std::size_t k, long epoch = 0,
                                int threads = 0);

/// Converts an explicit per-point table (rows in sample order) into the
/// compact per-slice form.
SliceNeighbors compact_neighbors(const NeighborIds& ids);

struct LossTerms {
  double data = 0.0;     // L1 data term (outlier-weighted when enabled)
  double reg = 0.0;      // lambda_reg * sum ||s_j - s_target||^2
  double outlier = 0.0;  // sum_i n_i eta_i when outlier weighting is on
  std::size_t points = 0;

  double total() const { return data + reg + outlier; }
};

/// Gradients of the total loss, shaped like the parameters.
struct Gradients {
  std::vector<double> means, log_scales, quaternions, intensities;
  std::vector<double> rotations, translations, log_sigma, eta;

  Gradients() = default;
  Gradients(std::size_t n_primitives, std::size_t n_slices);
};

/// Options for one evaluation of the objective.
struct ObjectiveOptions {
  /// Slices to include, half-open range in global order. Default: all.
  std::size_t slice_begin = 0;
  std::size_t slice_end = static_cast<std::size_t>(-1);
  /// Multiplier on the regularization term (chunked epochs split it).
  double reg_weight = 1.0;
  int threads = 0;
  /// When set, receives the rendered intensity of every sample, per slice.
  std::vector<std::vector<double>>* predictions = nullptr;
};

/// Loss only. Throws TrainingDivergence if a render is non-finite.
LossTerms compute_loss(const TrainingData& data, const NeighborTable& neighbors,
                       const GaussianField& field, const SliceStates& states,
                       const LossConfig& cfg, const ObjectiveOptions& opt = {});

/// Loss and analytic gradients for every parameter class. Primitives that are
/// not referenced by any included neighbor set receive only the regularizer
/// gradient.
LossTerms backward(const TrainingData& data, const NeighborTable& neighbors,
                   const GaussianField& field, const SliceStates& states, const LossConfig& cfg,
                   Gradients& grads, const ObjectiveOptions& opt = {});

}  // namespace gsvr
