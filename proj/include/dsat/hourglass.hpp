#pragma once

#include <optional>

#include "dsat/cca.hpp"

namespace dsat {

struct DssConfig {
  std::size_t channels = 16;
  std::size_t height = 16;  // input feature extents, divisible by 8
  std::size_t width = 16;
  std::size_t block_convs = 2;  // BN → ReLU → conv units per residual block
  bool enable_cca = true;
  CcaConfig cca;
};

/// Hourglass whose encoder pyramid reaches the decoder through cross-channel
/// attention. Without CCA the encoder features are added to the decoder
/// unchanged, which is the plain hourglass.
class Hourglass {
 public:
  Hourglass() = default;
  Hourglass(ParameterStore& store, const std::string& name, const DssConfig& cfg, Rng& rng);

  /// Y_0 = x; Y_{t+1} = maxpool(block_t(Y_t)).
  PyramidFeatures encode(const Tensor& x, bool training);
  /// From D̄_3 upward: h ← UP×2(block(h)) + D̄_t for t = 2, 1, 0.
  Tensor decode(const std::array<Tensor, kScales>& injected, bool training);
  Tensor operator()(const Tensor& x, bool training, Rng& rng);

  const DssConfig& config() const { return cfg_; }

  std::array<ResidualBlock, kScales - 1> down;
  std::array<ResidualBlock, kScales - 1> up;
  std::optional<CrossChannelAttention> cca;

 private:
  void check_input(const Tensor& x) const;
  DssConfig cfg_;
};

}  // namespace dsat
