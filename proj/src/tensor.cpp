#include "dsat/tensor.hpp"

#include <algorithm>
#include <functional>
#include <sstream>
#include <unordered_set>

#include "dsat/error.hpp"

namespace dsat {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

static void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, Real value, bool requires_grad) {
  validate_shape(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data.assign(shape_numel(shape), value);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(const Shape& shape, std::vector<Real> values, bool requires_grad) {
  validate_shape(shape);
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(Real value) { return full({1}, value); }

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<Real> Tensor::data() {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->data;
}

std::span<const Real> Tensor::data() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->data;
}

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!impl_) throw ContractError("use of an undefined tensor");
  impl_->requires_grad = flag;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<Real> Tensor::grad() {
  if (!impl_) throw ContractError("use of an undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

std::span<const Real> Tensor::grad() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return from(shape(), impl_->data, false);
}

void Tensor::set_node(std::shared_ptr<detail::Node> node) { impl_->node = std::move(node); }

Real Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw ShapeError("at(): rank " + std::to_string(index.size()) + " index into " + shape_str(s));
  std::size_t flat = 0, axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw ShapeError("at(): index out of range for " + shape_str(s));
    flat = flat * s[axis++] + i;
  }
  return data()[flat];
}

void Tensor::backward() const {
  if (numel() != 1) throw ShapeError("backward() requires a scalar, got " + shape_str(shape()));
  if (!impl_->requires_grad) throw ContractError("backward() on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order of graph nodes.
  std::vector<Tensor> order;
  std::unordered_set<const detail::TensorImpl*> visited;
  std::vector<std::pair<Tensor, std::size_t>> stack;
  stack.emplace_back(*this, 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const auto& node = t.impl_->node;
    if (node && next < node->inputs.size()) {
      const Tensor& in = node->inputs[next++];
      if (in.requires_grad() && visited.insert(in.impl_.get()).second) {
        stack.emplace_back(in, 0);
      }
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }

  Tensor root = *this;
  root.grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto& node = it->impl_->node;
    if (node && it->has_grad()) node->backward(*it);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace dsat
