#include "dsat/hourglass.hpp"

#include "dsat/error.hpp"

namespace dsat {

Hourglass::Hourglass(ParameterStore& store, const std::string& name, const DssConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.height == 0 || cfg.width == 0 || cfg.height % 8 || cfg.width % 8) {
    throw ConfigError("hourglass: feature extents " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
                      " are not divisible by 8");
  }
  for (std::size_t t = 0; t + 1 < kScales; ++t) {
    down[t] = ResidualBlock(store, name + ".enc" + std::to_string(t), cfg.channels, rng, cfg.block_convs);
  }
  if (cfg.enable_cca) cca.emplace(store, name + ".cca", cfg.channels, cfg.height, cfg.width, cfg.cca, rng);
  for (std::size_t t = 0; t + 1 < kScales; ++t) {
    up[t] = ResidualBlock(store, name + ".dec" + std::to_string(t), cfg.channels, rng, cfg.block_convs);
  }
}

void Hourglass::check_input(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != cfg_.channels) {
    throw ShapeError("hourglass: expected N×" + std::to_string(cfg_.channels) + "×H×W input, got " +
                     shape_str(x.shape()));
  }
  if (x.dim(2) % 8 || x.dim(3) % 8) {
    throw ConfigError("hourglass: input extents of " + shape_str(x.shape()) + " are not divisible by 8");
  }
}

PyramidFeatures Hourglass::encode(const Tensor& x, bool training) {
  check_input(x);
  PyramidFeatures y;
  y.scales[0] = x;
  for (std::size_t t = 0; t + 1 < kScales; ++t) y.scales[t + 1] = max_pool2d(down[t](y.scales[t], training), 2);
  return y;
}

Tensor Hourglass::decode(const std::array<Tensor, kScales>& injected, bool training) {
  Tensor h = injected[kScales - 1];
  for (std::size_t t = kScales - 1; t-- > 0;) {
    const Tensor lifted = upsample_nearest(up[t](h, training), 2);
    if (lifted.shape() != injected[t].shape()) {
      throw ShapeError("hourglass: decoder state " + shape_str(lifted.shape()) + " cannot take injection " +
                       shape_str(injected[t].shape()) + " at scale " + std::to_string(t));
    }
    h = add(lifted, injected[t]);
  }
  return h;
}

Tensor Hourglass::operator()(const Tensor& x, bool training, Rng& rng) {
  const PyramidFeatures y = encode(x, training);
  if (cca) return decode((*cca)(y, training, rng), training);
  return decode(y.scales, training);
}

}  // namespace dsat
