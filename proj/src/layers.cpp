#include "dsat/layers.hpp"

#include <cmath>

#include "dsat/error.hpp"

namespace dsat {

Tensor ParameterStore::add(const std::string& name, const Shape& shape, bool trainable) {
  if (find(name)) throw ConfigError("duplicate parameter name: " + name);
  Tensor t = Tensor::zeros(shape, trainable);
  entries_.push_back({name, t, trainable});
  return t;
}

std::vector<Tensor> ParameterStore::trainable() const {
  std::vector<Tensor> out;
  for (const auto& p : entries_)
    if (p.trainable) out.push_back(p.value);
  return out;
}

std::size_t ParameterStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : entries_)
    if (p.trainable) n += p.value.numel();
  return n;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : entries_)
    if (p.name == name) return &p;
  return nullptr;
}

void ParameterStore::zero_grad() {
  for (auto& p : entries_) p.value.zero_grad();
}

void init_kaiming(Tensor& t, std::size_t fan_in, Rng& rng) {
  init_normal(t, std::sqrt(2.0 / static_cast<Real>(fan_in)), rng);
}

void init_normal(Tensor& t, Real stddev, Rng& rng) {
  std::normal_distribution<Real> dist(0.0, stddev);
  for (Real& v : t.data()) v = dist(rng);
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
               std::size_t kernel, std::size_t stride, std::size_t padding, Rng& rng)
    : weight(store.add(name + ".weight", {out, in, kernel, kernel})), stride_(stride), padding_(padding) {
  init_kaiming(weight, in * kernel * kernel, rng);
}

ConvTranspose2d::ConvTranspose2d(ParameterStore& store, const std::string& name, std::size_t in,
                                 std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
                                 Rng& rng)
    : weight(store.add(name + ".weight", {in, out, kernel, kernel})), stride_(stride), padding_(padding) {
  // Each output pixel receives about in·(kernel/stride)² taps.
  const std::size_t taps = std::max<std::size_t>(1, kernel / std::max<std::size_t>(1, stride));
  init_kaiming(weight, in * taps * taps, rng);
}

BatchNorm2d::BatchNorm2d(ParameterStore& store, const std::string& name, std::size_t channels)
    : gamma(store.add(name + ".gamma", {channels})), beta(store.add(name + ".beta", {channels})) {
  std::fill(gamma.data().begin(), gamma.data().end(), 1.0);
  state_.running_mean = store.add(name + ".running_mean", {channels}, false);
  state_.running_var = store.add(name + ".running_var", {channels}, false);
  std::fill(state_.running_var.data().begin(), state_.running_var.data().end(), 1.0);
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::size_t width)
    : gamma(store.add(name + ".gamma", {width})), beta(store.add(name + ".beta", {width})) {
  std::fill(gamma.data().begin(), gamma.data().end(), 1.0);
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, bool bias,
               Rng& rng)
    : weight(store.add(name + ".weight", {in, out})) {
  init_normal(weight, 1.0 / std::sqrt(static_cast<Real>(in)), rng);
  if (bias) this->bias = store.add(name + ".bias", {out});
}

Tensor Linear::operator()(const Tensor& x) const {
  const std::size_t in = weight.dim(0);
  if (x.shape().back() != in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = weight.dim(1);
  Tensor y = matmul(reshape(x, {x.numel() / in, in}), weight);
  if (bias.defined()) y = add_bias(y, bias);
  return reshape(y, out_shape);
}

ResidualBlock::ResidualBlock(ParameterStore& store, const std::string& name, std::size_t channels, Rng& rng,
                             std::size_t units) {
  if (units == 0) throw ConfigError("residual block " + name + " needs at least one unit");
  for (std::size_t u = 0; u < units; ++u) {
    const std::string tag = units == 1 ? "" : std::to_string(u);
    norms.emplace_back(store, name + ".bn" + tag, channels);
    convs.emplace_back(store, name + ".conv" + tag, channels, channels, 3, 1, 1, rng);
  }
}

Tensor ResidualBlock::operator()(const Tensor& x, bool training) {
  Tensor h = x;
  for (std::size_t u = 0; u < convs.size(); ++u) h = convs[u](relu(norms[u](h, training)));
  return add(x, h);
}

}  // namespace dsat
