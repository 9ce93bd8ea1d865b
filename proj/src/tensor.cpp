#include "stegsense/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "stegsense/errors.hpp"

namespace stegsense {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

double* detail::TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad.data();
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return from(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from(Shape{1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }
std::span<const double> Tensor::grad() const { return impl_->grad; }
std::span<double> Tensor::mutable_grad() {
  impl_->grad_buffer();
  return impl_->grad;
}
bool Tensor::has_grad() const { return !impl_->grad.empty(); }

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

Tensor& Tensor::retain_grad() {
  impl_->retain_grad = true;
  return *this;
}

bool Tensor::is_leaf() const { return impl_->grad_fn == nullptr; }

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const { return from(impl_->shape, impl_->data, false); }

void Tensor::check_finite(const std::string& what) const {
  for (std::size_t i = 0; i < impl_->data.size(); ++i) {
    if (!std::isfinite(impl_->data[i])) {
      throw NumericError(what + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

void Tensor::backward() const {
  if (!impl_ || !impl_->requires_grad) {
    throw UsageError("backward() on a tensor that is not attached to a graph");
  }
  if (impl_->data.size() != 1) {
    throw UsageError("backward() needs a scalar, got shape " + shape_str(impl_->shape));
  }

  // Iterative post-order DFS; reversing it gives a topological order where
  // each tensor precedes its inputs.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& fn = node->grad_fn;
    if (fn && next < fn->inputs.size()) {
      detail::TensorImpl* child = fn->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  impl_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* t = *it;
    if (!t->grad_fn) continue;
    if (!t->grad.empty()) t->grad_fn->backward(*t);
    if (!t->retain_grad) {
      t->grad.clear();
      t->grad.shrink_to_fit();
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

namespace detail {

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

Tensor make_result(Shape shape, std::vector<double> data) {
  return Tensor::from(shape, std::move(data), false);
}

void attach(Tensor& out, std::string name, std::vector<Tensor> inputs,
            std::function<void(const TensorImpl& out)> backward) {
  if (!g_grad_enabled) return;
  bool needed = false;
  for (const Tensor& t : inputs) needed = needed || t.requires_grad();
  if (!needed) return;
  auto node = std::make_shared<Node>();
  node->name = std::move(name);
  for (Tensor& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(backward);
  out.impl()->grad_fn = std::move(node);
  out.impl()->requires_grad = true;
}

}  // namespace detail

}  // namespace stegsense
