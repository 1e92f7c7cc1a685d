#pragma once

#include <array>
#include <vector>

#include "dsat/layers.hpp"

namespace dsat {

inline constexpr std::size_t kScales = 4;

/// Encoder outputs Y_t, t = 0..3; scale t is N×C×(H/2^t)×(W/2^t).
struct PyramidFeatures {
  std::array<Tensor, kScales> scales;
};

struct CcaConfig {
  std::size_t heads = 4;
  std::size_t depth = 3;
  std::size_t head_dim = 0;  // 0 selects channels / heads
  Real dropout = 0.1;
};

/// Sequence length on the coarsest grid.
inline std::size_t token_count(std::size_t height, std::size_t width) { return (height / 8) * (width / 8); }

/// Channel-axis concatenation in scale order: 4 × (N×s×C) → N×s×4C.
Tensor concat_scales(const std::array<Tensor, kScales>& tokens);

/// Multi-head sigmoid attention across feature channels.
///
/// q, k, v are N×s×(heads·head_dim). Per head the d×d score matrix
/// σ(q_hᵀ k_h / (2√channels)) mixes the head's channels of v, and the heads
/// are averaged. Returns N×s×head_dim.
Tensor cross_channel_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                               std::size_t channels);

/// One attention + MLP layer, shared by all four scales except for the
/// per-scale query norm and projection.
class CcaBlock {
 public:
  CcaBlock() = default;
  CcaBlock(ParameterStore& store, const std::string& name, std::size_t channels, const CcaConfig& cfg, Rng& rng);

  struct Projections {
    Tensor q, k, v;  // N×s×P
  };
  /// Q_t = LN_t(Z_t)·W_Q^t, K = LN(Z_all)·W_K, V = LN(Z_all)·W_V.
  Projections project_qkv(const Tensor& z_t, std::size_t t, const Tensor& z_all) const;
  /// Z_t + MLP(LN(Z_t + Q̄_t)).
  Tensor mlp_residual(const Tensor& z_t, const Tensor& q_bar) const;
  /// Q̄_t in N×s×C: head mean followed by the output projection.
  Tensor attend(const Tensor& z_t, std::size_t t, const Tensor& z_all) const;
  std::array<Tensor, kScales> operator()(const std::array<Tensor, kScales>& z) const;

  std::array<LayerNorm, kScales> ln_q;
  LayerNorm ln_kv;
  std::array<Linear, kScales> wq;
  Linear wk, wv, out_proj;
  LayerNorm ln_mlp;
  Linear fc1, fc2;

 private:
  std::size_t channels_ = 0, heads_ = 0;
};

class CrossChannelAttention {
 public:
  CrossChannelAttention() = default;
  /// height/width are the Y_0 extents (both divisible by 8).
  CrossChannelAttention(ParameterStore& store, const std::string& name, std::size_t channels, std::size_t height,
                        std::size_t width, const CcaConfig& cfg, Rng& rng);

  /// Strided reduction to the Y_3 grid, flatten, positional embedding, dropout.
  std::array<Tensor, kScales> tokenize(const PyramidFeatures& y, bool training, Rng& rng) const;
  /// D̄_t = Y_t + ReLU(BN(conv(UP×2^(3−t)(Trans(Z̄_t))))).
  std::array<Tensor, kScales> reconstruct(const std::array<Tensor, kScales>& z_bar, const PyramidFeatures& y,
                                          bool training);
  std::array<Tensor, kScales> operator()(const PyramidFeatures& y, bool training, Rng& rng);

  /// Zeroes the output projection, the second MLP layer and the
  /// reconstruction convolutions, which makes the block an exact identity.
  void zero_residual_paths();

  std::array<Conv2d, kScales> reduce;
  std::array<Tensor, kScales> pos_embed;  // s×C each
  std::vector<CcaBlock> blocks;
  std::array<Conv2d, kScales> recon_conv;
  std::array<BatchNorm2d, kScales> recon_bn;

 private:
  std::size_t channels_ = 0, grid_h_ = 0, grid_w_ = 0;
  Real dropout_ = 0.0;
};

}  // namespace dsat
