#pragma once

#include <map>
#include <memory>
#include <vector>

#include "dsat/config.hpp"
#include "dsat/dsa_gate.hpp"
#include "dsat/heads.hpp"
#include "dsat/hourglass.hpp"

namespace dsat {

/// Stem: 7×7 conv (stride 2 unless downsample is 1), BN, ReLU, 2×2 max
/// pool when downsample is 4, then one residual block.
class Stem {
 public:
  Stem() = default;
  Stem(ParameterStore& store, const std::string& name, std::size_t channels, std::size_t downsample,
       std::size_t block_convs, Rng& rng);
  Tensor operator()(const Tensor& image, bool training);

  Conv2d conv;
  BatchNorm2d norm;
  ResidualBlock block;

 private:
  bool pool_ = false;
};

struct ForwardOptions {
  bool training = false;
  GateMode gate;  // `training` is overwritten from the field above
};

struct ForwardResult {
  std::vector<HeatmapSet> stacks;  // one per stack, all supervised
  /// Decisions of each enabled gate, keyed by stack index, one per sample.
  std::map<std::size_t, std::vector<GateDecision>> gates;
};

/// Stacked gate → hourglass → residual → heads network. Stack i+1 consumes
/// the features that fed the heads of stack i.
class DsatModel {
 public:
  explicit DsatModel(const TrainConfig& cfg);
  DsatModel(const DsatModel&) = delete;
  DsatModel& operator=(const DsatModel&) = delete;

  /// images N×1×S×S.
  ForwardResult forward(const Tensor& images, const ForwardOptions& opts, Rng& rng);

  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  const TrainConfig& config() const { return cfg_; }
  /// Stack indices carrying a gate, ascending.
  std::vector<std::size_t> gate_indices() const;

  Stem stem;
  std::vector<Hourglass> hourglasses;
  std::vector<ResidualBlock> post;  // full-resolution refinement, empty when cfg.post_block is off
  std::vector<PredictionHeads> heads;

 private:
  TrainConfig cfg_;
  ParameterStore store_;
};

std::unique_ptr<DsatModel> build_model(const TrainConfig& cfg);

/// Stacks N×1×S×S from per-sample 1×S×S images.
Tensor batch_images(const std::vector<const Tensor*>& images);

}  // namespace dsat
