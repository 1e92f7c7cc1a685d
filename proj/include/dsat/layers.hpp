#pragma once

#include <string>
#include <vector>

#include "dsat/ops.hpp"
#include "dsat/tensor.hpp"

namespace dsat {

struct Parameter {
  std::string name;  // dotted path, e.g. "stack0.dss.cca.block1.wq2"
  Tensor value;
  bool trainable = true;  // false for batch-norm running statistics
};

/// Ordered registry of every tensor a model owns. Registration order is the
/// checkpoint order.
class ParameterStore {
 public:
  /// Registers a zero-filled tensor. Throws ConfigError on a duplicate name.
  Tensor add(const std::string& name, const Shape& shape, bool trainable = true);

  const std::vector<Parameter>& entries() const { return entries_; }
  std::vector<Tensor> trainable() const;
  /// Number of trainable scalars.
  std::size_t trainable_count() const;
  const Parameter* find(const std::string& name) const;
  void zero_grad();

 private:
  std::vector<Parameter> entries_;
};

/// Fills with N(0, 2/fan_in).
void init_kaiming(Tensor& t, std::size_t fan_in, Rng& rng);
void init_normal(Tensor& t, Real stddev, Rng& rng);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
         std::size_t stride, std::size_t padding, Rng& rng);
  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, stride_, padding_); }

  Tensor weight;

 private:
  std::size_t stride_ = 1, padding_ = 0;
};

class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                  std::size_t kernel, std::size_t stride, std::size_t padding, Rng& rng);
  Tensor operator()(const Tensor& x) const { return conv_transpose2d(x, weight, stride_, padding_); }

  Tensor weight;

 private:
  std::size_t stride_ = 1, padding_ = 0;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParameterStore& store, const std::string& name, std::size_t channels);
  Tensor operator()(const Tensor& x, bool training) { return batch_norm2d(x, gamma, beta, state_, training); }

  Tensor gamma, beta;

 private:
  BatchNormState state_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t width);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

  Tensor gamma, beta;
};

/// Affine map over the last axis: x[..., in] · W[in×out] (+ b).
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, bool bias, Rng& rng);
  Tensor operator()(const Tensor& x) const;

  Tensor weight, bias;
};

/// Pre-activation residual unit: x + f(x) where f chains `units` copies
/// of BN → ReLU → conv3×3.
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(ParameterStore& store, const std::string& name, std::size_t channels, Rng& rng,
                std::size_t units = 2);
  Tensor operator()(const Tensor& x, bool training);

  std::vector<BatchNorm2d> norms;
  std::vector<Conv2d> convs;
};

}  // namespace dsat
