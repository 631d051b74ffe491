#pragma once
/*
 * Dense row-major tensors with tape-free reverse-mode differentiation.
 *
 * Every operation that has at least one input with requires_grad() records
 * a backward closure on its output; the closures form a DAG that backward()
 * sorts topologically and walks in reverse. Leaf gradients accumulate across
 * backward() calls until zero_grad(); interior gradients are reset on each
 * call so a graph can be differentiated more than once.
 */

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace enres::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

struct TensorImpl;

/// Records how to push an output gradient back into the inputs.
struct GradFn {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  /// Reads out.grad and accumulates into the inputs that require grad.
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<GradFn> grad_fn;  // null for leaves and untracked results

  /// grad, allocated (zero) on first use.
  std::vector<double>& grad_buffer();
};

/// Shared handle; copies alias the same storage (like a framework tensor).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  /// Throws ParameterError when values.size() != product(shape).
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->values.size(); }

  std::span<const double> values() const { return impl_->values; }
  /// Direct write access; used by optimizers and data loaders on leaves.
  std::span<double> mutable_values() { return impl_->values; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient view; zeros when nothing has been accumulated yet.
  std::span<const double> grad() const;
  void zero_grad();

  /// Same values, no history, requires_grad = false.
  Tensor detach() const;
  /// Deep copy of values (and requires_grad flag), no history.
  Tensor clone() const;

  TensorImpl* impl() const noexcept { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared() const noexcept { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Populates dLoss/dT for every tensor reachable from `loss` that requires
/// grad. Throws ParameterError unless loss is a single-element tensor.
void backward(const Tensor& loss);

/// Builds an op result; attaches `backward_fn` only if some input tracks grad.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl& out)> backward_fn);

}  // namespace enres::ad
