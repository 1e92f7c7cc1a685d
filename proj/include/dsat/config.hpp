#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsat/landmarks.hpp"

namespace dsat {

/// Everything needed to build, train and evaluate a model. The text form is
/// flat `key = value` lines whose keys are exactly these field names.
struct TrainConfig {
  std::size_t image_size = 64;
  std::size_t heatmap_size = 32;
  std::size_t downsample = 4;  // preprocessing reduction: 1, 2 or 4
  std::size_t channels = 16;
  std::size_t block_convs = 2;  // BN → ReLU → conv3×3 units per residual block
  std::size_t stacks = 2;
  bool post_block = true;  // residual block between each hourglass and its heads
  std::size_t head_channels = 64;  // width of the upsampled trunk shared by both heads
  std::vector<std::size_t> dsa_placement{0, 1};
  std::size_t cca_depth = 2;
  std::size_t cca_heads = 4;
  std::size_t cca_head_dim = 0;  // 0 selects channels / heads
  Real dropout = 0.1;
  Real sigma_gt = 1.5;
  std::size_t landmarks = 12;
  std::size_t boundaries = 3;
  Real lr = 2.5e-4;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
  std::size_t halve_every = 200;
  std::size_t iterations = 1000;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
  bool enable_dsa = true;
  bool enable_cca = true;
  bool gate_noise = true;
  bool augment = true;
  std::size_t train_samples = 200;
  NormKind norm_kind = NormKind::InterOcular;
  Real fr_threshold = 10.0;

  std::size_t feature_size() const { return image_size / downsample; }
  /// Throws ConfigError describing the first violated constraint.
  void validate() const;
};

/// Parses `key = value` text; `#` starts a comment. Unknown keys, duplicate
/// keys and malformed values throw ConfigError. Missing keys keep defaults.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::string& path);
/// Canonical text: every key, fixed order, shortest round-trip numbers.
std::string to_text(const TrainConfig& cfg);
/// FNV-1a 64 of the canonical text, as 16 hex digits.
std::string config_hash(const TrainConfig& cfg);

}  // namespace dsat
