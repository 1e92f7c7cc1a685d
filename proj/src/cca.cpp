#include "dsat/cca.hpp"

#include <cmath>

#include "dsat/error.hpp"

namespace dsat {

namespace {

std::size_t resolve_head_dim(std::size_t channels, const CcaConfig& cfg) {
  if (cfg.heads == 0) throw ConfigError("cca: heads must be positive");
  if (cfg.depth == 0) throw ConfigError("cca: depth must be positive");
  const std::size_t d = cfg.head_dim ? cfg.head_dim : channels / cfg.heads;
  if (d == 0) throw ConfigError("cca: head_dim resolves to zero (channels < heads)");
  return d;
}

std::size_t scale_factor(std::size_t t) { return std::size_t{1} << (kScales - 1 - t); }

}  // namespace

Tensor concat_scales(const std::array<Tensor, kScales>& tokens) {
  for (std::size_t t = 1; t < kScales; ++t) {
    if (tokens[t].rank() != 3 || tokens[t].dim(1) != tokens[0].dim(1)) {
      throw ShapeError("concat_scales: sequence length mismatch, " + shape_str(tokens[0].shape()) + " vs " +
                       shape_str(tokens[t].shape()));
    }
  }
  return concat_last({tokens.begin(), tokens.end()});
}

Tensor cross_channel_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                               std::size_t channels) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("cross_channel_attention: q/k/v shapes " + shape_str(q.shape()) + ", " + shape_str(k.shape()) +
                     ", " + shape_str(v.shape()));
  }
  const std::size_t width = q.dim(2);
  if (heads == 0 || width % heads) {
    throw ShapeError("cross_channel_attention: " + std::to_string(heads) + " heads do not divide projection width " +
                     std::to_string(width));
  }
  const std::size_t d = width / heads;
  const Real temperature = 2.0 * std::sqrt(static_cast<Real>(channels));
  Tensor acc;
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice_last(q, h * d, d);
    const Tensor kh = slice_last(k, h * d, d);
    const Tensor vh = slice_last(v, h * d, d);
    const Tensor logits = scale(bmm(transpose12(qh), kh), 1.0 / temperature);  // N×d×d
    for (Real x : logits.data()) {
      if (!std::isfinite(x)) throw NumericError("cross_channel_attention: non-finite attention logit");
    }
    const Tensor mixed = transpose12(bmm(sigmoid(logits), transpose12(vh)));  // N×s×d
    acc = acc.defined() ? add(acc, mixed) : mixed;
  }
  return scale(acc, 1.0 / static_cast<Real>(heads));
}

CcaBlock::CcaBlock(ParameterStore& store, const std::string& name, std::size_t channels, const CcaConfig& cfg,
                   Rng& rng)
    : channels_(channels), heads_(cfg.heads) {
  const std::size_t d = resolve_head_dim(channels, cfg);
  const std::size_t width = cfg.heads * d;
  for (std::size_t t = 0; t < kScales; ++t) {
    ln_q[t] = LayerNorm(store, name + ".ln_q" + std::to_string(t), channels);
    wq[t] = Linear(store, name + ".wq" + std::to_string(t), channels, width, false, rng);
  }
  ln_kv = LayerNorm(store, name + ".ln_kv", kScales * channels);
  wk = Linear(store, name + ".wk", kScales * channels, width, false, rng);
  wv = Linear(store, name + ".wv", kScales * channels, width, false, rng);
  out_proj = Linear(store, name + ".out", d, channels, false, rng);
  ln_mlp = LayerNorm(store, name + ".ln_mlp", channels);
  fc1 = Linear(store, name + ".fc1", channels, 2 * channels, true, rng);
  fc2 = Linear(store, name + ".fc2", 2 * channels, channels, true, rng);
}

CcaBlock::Projections CcaBlock::project_qkv(const Tensor& z_t, std::size_t t, const Tensor& z_all) const {
  const Tensor kv_in = ln_kv(z_all);
  return {wq.at(t)(ln_q.at(t)(z_t)), wk(kv_in), wv(kv_in)};
}

Tensor CcaBlock::mlp_residual(const Tensor& z_t, const Tensor& q_bar) const {
  return add(z_t, fc2(relu(fc1(ln_mlp(add(z_t, q_bar))))));
}

Tensor CcaBlock::attend(const Tensor& z_t, std::size_t t, const Tensor& z_all) const {
  const auto p = project_qkv(z_t, t, z_all);
  return out_proj(cross_channel_attention(p.q, p.k, p.v, heads_, channels_));
}

std::array<Tensor, kScales> CcaBlock::operator()(const std::array<Tensor, kScales>& z) const {
  const Tensor z_all = concat_scales(z);
  const Tensor kv_in = ln_kv(z_all);
  const Tensor k = wk(kv_in);
  const Tensor v = wv(kv_in);
  std::array<Tensor, kScales> out;
  for (std::size_t t = 0; t < kScales; ++t) {
    const Tensor q = wq[t](ln_q[t](z[t]));
    out[t] = mlp_residual(z[t], out_proj(cross_channel_attention(q, k, v, heads_, channels_)));
  }
  return out;
}

CrossChannelAttention::CrossChannelAttention(ParameterStore& store, const std::string& name, std::size_t channels,
                                             std::size_t height, std::size_t width, const CcaConfig& cfg, Rng& rng)
    : channels_(channels), grid_h_(height / 8), grid_w_(width / 8), dropout_(cfg.dropout) {
  if (height % 8 || width % 8 || height == 0 || width == 0) {
    throw ConfigError("cca: feature extents " + std::to_string(height) + "x" + std::to_string(width) +
                      " are not divisible by 8");
  }
  resolve_head_dim(channels, cfg);
  const std::size_t s = grid_h_ * grid_w_;
  for (std::size_t t = 0; t < kScales; ++t) {
    const std::string ts = std::to_string(t);
    reduce[t] = Conv2d(store, name + ".reduce" + ts, channels, channels, 1, 1, 0, rng);
    pos_embed[t] = store.add(name + ".pos" + ts, {s * channels});
  }
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    blocks.emplace_back(store, name + ".block" + std::to_string(b), channels, cfg, rng);
  }
  for (std::size_t t = 0; t < kScales; ++t) {
    const std::string ts = std::to_string(t);
    recon_conv[t] = Conv2d(store, name + ".recon" + ts + ".conv", channels, channels, 1, 1, 0, rng);
    recon_bn[t] = BatchNorm2d(store, name + ".recon" + ts + ".bn", channels);
  }
}

std::array<Tensor, kScales> CrossChannelAttention::tokenize(const PyramidFeatures& y, bool training, Rng& rng) const {
  std::array<Tensor, kScales> z;
  for (std::size_t t = 0; t < kScales; ++t) {
    const Tensor pooled = reduce[t](avg_pool2d(y.scales[t], scale_factor(t)));
    if (pooled.dim(2) != grid_h_ || pooled.dim(3) != grid_w_ || pooled.dim(1) != channels_) {
      throw ConfigError("cca: scale " + std::to_string(t) + " reduces to " + shape_str(pooled.shape()) +
                        ", expected a " + std::to_string(grid_h_) + "x" + std::to_string(grid_w_) + " grid");
    }
    const std::size_t N = pooled.dim(0), s = grid_h_ * grid_w_;
    const Tensor flat = reshape(nchw_to_tokens(pooled), {N, s * channels_});
    z[t] = dropout(reshape(add_bias(flat, pos_embed[t]), {N, s, channels_}), dropout_, training, rng);
  }
  return z;
}

std::array<Tensor, kScales> CrossChannelAttention::reconstruct(const std::array<Tensor, kScales>& z_bar,
                                                               const PyramidFeatures& y, bool training) {
  std::array<Tensor, kScales> d;
  for (std::size_t t = 0; t < kScales; ++t) {
    const Tensor map = upsample_nearest(tokens_to_nchw(z_bar[t], grid_h_, grid_w_), scale_factor(t));
    if (map.shape() != y.scales[t].shape()) {
      throw ShapeError("cca: reconstructed scale " + std::to_string(t) + " is " + shape_str(map.shape()) +
                       ", encoder feature is " + shape_str(y.scales[t].shape()));
    }
    d[t] = add(y.scales[t], relu(recon_bn[t](recon_conv[t](map), training)));
  }
  return d;
}

std::array<Tensor, kScales> CrossChannelAttention::operator()(const PyramidFeatures& y, bool training, Rng& rng) {
  auto z = tokenize(y, training, rng);
  for (const auto& block : blocks) z = block(z);
  return reconstruct(z, y, training);
}

void CrossChannelAttention::zero_residual_paths() {
  auto zero = [](Tensor t) {
    if (t.defined()) std::fill(t.data().begin(), t.data().end(), 0.0);
  };
  for (auto& b : blocks) {
    zero(b.out_proj.weight);
    zero(b.fc2.weight);
    zero(b.fc2.bias);
  }
  for (auto& c : recon_conv) zero(c.weight);
}

}  // namespace dsat
