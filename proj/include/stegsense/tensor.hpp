#ifndef STEGSENSE_TENSOR_HPP_
#define STEGSENSE_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stegsense {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl;

// One recorded operation. `backward` reads the output's gradient and
// accumulates into the gradients of `inputs`.
struct Node {
  std::string name;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool retain_grad = false;
  std::shared_ptr<Node> grad_fn;

  double* grad_buffer();  // allocates zeros on first use
};

}  // namespace detail

// Dense row-major double tensor with reverse-mode autodiff.
//
// A Tensor is a shared handle: copies alias the same storage, like the
// framework tensors it imitates. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  // Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  bool has_grad() const;

  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  // Keep this (non-leaf) tensor's gradient after backward().
  Tensor& retain_grad();
  bool is_leaf() const;

  void zero_grad();
  // Deep copy of the values, detached from any graph.
  Tensor clone() const;
  Tensor detach() const { return clone(); }

  // Reverse pass from a scalar. Gradients accumulate across calls.
  void backward() const;

  // Throws NumericError naming `what` if any value is NaN or infinite.
  void check_finite(const std::string& what) const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// While alive, operations on this thread do not record graph nodes.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

namespace detail {

// Helpers for op implementations.
bool any_requires_grad(std::initializer_list<const Tensor*> inputs);
Tensor make_result(Shape shape, std::vector<double> data);
void attach(Tensor& out, std::string name, std::vector<Tensor> inputs,
            std::function<void(const TensorImpl& out)> backward);

}  // namespace detail

}  // namespace stegsense

#endif  // STEGSENSE_TENSOR_HPP_
