#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "leafvit/shape.hpp"

namespace leafvit {

template <class T>
class BasicTensor;

namespace detail {

template <class T>
struct TensorImpl;

/// Adjoint of one recorded operation. `backward` reads the output gradient
/// from `out.grad` and accumulates into the captured inputs.
template <class T>
struct GradNode {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<GradNode<T>> node;

  T* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

}  // namespace detail

/// Dense row-major tensor handle. Copies share storage (like a reference);
/// use clone() for an independent value. Operations never mutate their
/// inputs except the explicitly mutating ones (batch-norm running stats,
/// optimizer updates through mutable_data()).
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> data);
  BasicTensor(Shape shape, std::initializer_list<T> values)
      : BasicTensor(std::move(shape), std::vector<T>(values)) {}

  static BasicTensor zeros(const Shape& shape) { return full(shape, T(0)); }
  static BasicTensor full(const Shape& shape, T value);
  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, std::vector<T>{value}); }

  [[nodiscard]] bool defined() const noexcept { return impl_ != nullptr; }
  [[nodiscard]] const Shape& shape() const { return impl_->shape; }
  [[nodiscard]] std::size_t numel() const { return impl_->data.size(); }
  [[nodiscard]] std::size_t rank() const { return impl_->shape.rank(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const { return impl_->shape[axis]; }

  [[nodiscard]] std::span<const T> data() const { return impl_->data; }
  [[nodiscard]] std::span<T> mutable_data() { return impl_->data; }
  [[nodiscard]] T item() const;
  [[nodiscard]] T at(std::initializer_list<std::size_t> index) const;

  [[nodiscard]] bool requires_grad() const { return impl_ && impl_->requires_grad; }
  /// Only leaves (tensors not produced by a recorded op) may toggle this.
  BasicTensor& set_requires_grad(bool on);
  [[nodiscard]] bool is_leaf() const { return impl_->node == nullptr; }
  [[nodiscard]] bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  /// Empty span when no gradient has been accumulated.
  [[nodiscard]] std::span<const T> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  /// Independent copy without autodiff history.
  [[nodiscard]] BasicTensor clone() const;
  /// Same data, cut from the graph; the copy is a fresh leaf.
  [[nodiscard]] BasicTensor detach() const { return clone(); }

  template <class U>
  [[nodiscard]] BasicTensor<U> cast() const {
    std::vector<U> out(impl_->data.begin(), impl_->data.end());
    return BasicTensor<U>(impl_->shape, std::move(out));
  }

  [[nodiscard]] const std::shared_ptr<detail::TensorImpl<T>>& impl() const noexcept { return impl_; }
  [[nodiscard]] bool same_storage(const BasicTensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Thread-local switch for graph recording. Disabled inside NoGradGuard.
class GradMode {
 public:
  static bool enabled() noexcept;
  static void set_enabled(bool on) noexcept;
};

class NoGradGuard {
 public:
  NoGradGuard() noexcept : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse-mode pass from a scalar loss. Gradients accumulate into every
/// reachable leaf with requires_grad; the recorded graph is consumed.
template <class T>
void backward(const BasicTensor<T>& loss);

namespace detail {

template <class T>
using BackwardFn = std::function<void(const TensorImpl<T>& out)>;

/// True when an op over `inputs` must record a node.
template <class T>
bool needs_grad(std::initializer_list<const BasicTensor<T>*> inputs);

/// Wraps op output; records `fn` when any input requires a gradient and
/// grad mode is on.
template <class T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data,
                           std::initializer_list<const BasicTensor<T>*> inputs, const char* op,
                           BackwardFn<T> fn);

/// Accumulation target for `t`'s gradient, or nullptr when `t` needs none.
template <class T>
T* grad_target(const BasicTensor<T>& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  return t.impl()->grad_buffer();
}

}  // namespace detail

}  // namespace leafvit
