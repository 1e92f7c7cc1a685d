#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dsat {

using Real = double;
using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class Tensor;

namespace detail {

struct Node {
  std::vector<Tensor> inputs;
  // Reads the output gradient and accumulates into the inputs.
  std::function<void(const Tensor& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> node;
};

}  // namespace detail

/// Dense row-major array of doubles with reverse-mode differentiation.
///
/// A Tensor is a handle: copies share storage and gradient. Operations
/// never mutate their inputs, so sharing is only observable through
/// parameters (which the optimizer updates in place) and gradients.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, Real value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor scalar(Real value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<Real> data();
  std::span<const Real> data() const;
  Real item() const;
  Real at(std::size_t flat) const { return data()[flat]; }
  /// Row-major multi-index access; throws ShapeError when out of range.
  Real at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  /// Gradient buffer, allocated (zero) on first access.
  std::span<Real> grad();
  std::span<const Real> grad() const;
  void zero_grad();

  /// Runs reverse-mode accumulation from this scalar (seed 1).
  void backward() const;

  /// Copy of the values with no graph attached.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  // Used by operation implementations.
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  void set_node(std::shared_ptr<detail::Node> node);

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Whether operations record a graph on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace dsat
