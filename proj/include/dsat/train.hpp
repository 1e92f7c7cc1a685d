#pragma once

#include <functional>
#include <vector>

#include "dsat/error.hpp"
#include "dsat/grad_check.hpp"
#include "dsat/model.hpp"
#include "dsat/synthetic.hpp"

namespace dsat {

/// lr · 0.5^floor(iteration / halve_every).
Real learning_rate(const TrainConfig& cfg, std::size_t iteration);

class Adam {
 public:
  Adam(Real beta1, Real beta2, Real eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  /// One bias-corrected step over every parameter that holds a gradient.
  void step(const std::vector<Tensor>& params, Real lr);
  std::size_t steps() const { return t_; }

 private:
  Real beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<Real>> m_, v_;
};

/// Ground-truth landmark and boundary maps for a batch, in heatmap
/// coordinates.
HeatmapSet make_targets(const std::vector<const SyntheticSample*>& batch, const TrainConfig& cfg);
/// Landmarks mapped from image to heatmap pixel coordinates.
std::vector<Point> heatmap_landmarks(const SyntheticSample& s, const TrainConfig& cfg);

using ParameterSnapshot = std::vector<std::vector<Real>>;
ParameterSnapshot snapshot(const ParameterStore& store);
void restore(ParameterStore& store, const ParameterSnapshot& snap);

struct TrainOptions {
  /// Called after every update with (iteration, loss, lr).
  std::function<void(std::size_t, Real, Real)> on_iteration;
};

struct TrainResult {
  std::vector<Real> losses;  // one per iteration, before that iteration's update
};

/// Thrown on a non-finite loss. The model has been rolled back to the
/// parameters of the last finite-loss iteration.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(std::size_t iteration, TrainResult partial);
  std::size_t iteration() const { return iteration_; }
  const TrainResult& partial() const { return partial_; }

 private:
  std::size_t iteration_;
  TrainResult partial_;
};

/// Adam on the summed stacked loss for cfg.iterations steps. Batches are
/// drawn by epoch-wise shuffling; with cfg.augment each sample is
/// augmented on the fly. Deterministic for a fixed cfg.seed.
TrainResult train(DsatModel& model, const std::vector<SyntheticSample>& data, const TrainOptions& opts = {});

/// Central-difference check of the training loss on one synthetic batch.
/// Trainable weights are first jittered by N(0, 0.05²) so no gradient is
/// trivially zero (the landmark and boundary heads start at zero). Gates run
/// the soft path without noise and dropout reuses one mask per evaluation.
GradCheckReport check_model_gradients(const TrainConfig& cfg, Real eps, Real tol);

}  // namespace dsat
