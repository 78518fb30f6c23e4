#include "leafvit/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "leafvit/error.hpp"

namespace leafvit {

// ---- Shape ----------------------------------------------------------------

Shape::Shape(std::initializer_list<std::size_t> dims) : dims_(dims) { validate(); }

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) { validate(); }

void Shape::validate() const {
  for (std::size_t d : dims_) {
    if (d == 0) throw DimensionError("zero extent in shape " + str());
  }
}

std::size_t Shape::numel() const noexcept {
  std::size_t n = 1;
  for (std::size_t d : dims_) n *= d;
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << ", ";
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

// ---- Tensor ---------------------------------------------------------------

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data) {
  if (shape.numel() != data.size()) {
    throw DimensionError("tensor of shape " + shape.str() + " needs " + std::to_string(shape.numel()) +
                         " values, got " + std::to_string(data.size()));
  }
  impl_ = std::make_shared<detail::TensorImpl<T>>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

template <class T>
BasicTensor<T> BasicTensor<T>::full(const Shape& shape, T value) {
  return BasicTensor(shape, std::vector<T>(shape.numel(), value));
}

template <class T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape().str());
  return impl_->data[0];
}

template <class T>
T BasicTensor<T>::at(std::initializer_list<std::size_t> index) const {
  const auto& dims = shape().dims();
  if (index.size() != dims.size()) throw DimensionError("index rank mismatch for shape " + shape().str());
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= dims[axis]) throw DimensionError("index out of range for shape " + shape().str());
    flat = flat * dims[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

template <class T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool on) {
  if (!is_leaf()) throw ContractError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = on;
  return *this;
}

template <class T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return BasicTensor(impl_->shape, impl_->data);
}

template class BasicTensor<float>;
template class BasicTensor<double>;

// ---- Autodiff -------------------------------------------------------------

namespace {
thread_local bool grad_mode_enabled = true;
}

bool GradMode::enabled() noexcept { return grad_mode_enabled; }
void GradMode::set_enabled(bool on) noexcept { grad_mode_enabled = on; }

namespace detail {

template <class T>
bool needs_grad(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (!GradMode::enabled()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const BasicTensor<T>* t) { return t && t->defined() && t->requires_grad(); });
}

template <class T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data,
                           std::initializer_list<const BasicTensor<T>*> inputs, const char* op,
                           BackwardFn<T> fn) {
  BasicTensor<T> out(std::move(shape), std::move(data));
  if (needs_grad<T>(inputs)) {
    auto node = std::make_shared<GradNode<T>>();
    node->op = op;
    for (const auto* in : inputs) {
      if (in && in->defined() && in->requires_grad()) node->inputs.push_back(in->impl());
    }
    node->backward = std::move(fn);
    out.impl()->requires_grad = true;
    out.impl()->node = std::move(node);
  }
  return out;
}

template bool needs_grad<float>(std::initializer_list<const BasicTensor<float>*>);
template bool needs_grad<double>(std::initializer_list<const BasicTensor<double>*>);
template BasicTensor<float> make_result(Shape, std::vector<float>,
                                        std::initializer_list<const BasicTensor<float>*>, const char*,
                                        BackwardFn<float>);
template BasicTensor<double> make_result(Shape, std::vector<double>,
                                         std::initializer_list<const BasicTensor<double>*>, const char*,
                                         BackwardFn<double>);

}  // namespace detail

template <class T>
void backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? loss.shape().str() : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return;

  // Post-order DFS; the reversed order visits every node after all its consumers.
  using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;
  std::vector<ImplPtr> order;
  std::unordered_set<const detail::TensorImpl<T>*> seen;
  std::vector<std::pair<ImplPtr, std::size_t>> stack;
  stack.emplace_back(loss.impl(), 0);
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto* node = impl->node.get();
    if (node && next < node->inputs.size()) {
      ImplPtr child = node->inputs[next++];
      if (seen.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  loss.impl()->grad_buffer()[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto& impl = *it;
    if (!impl->node) continue;
    if (!impl->grad.empty()) impl->node->backward(*impl);
    impl->node.reset();
    impl->grad.clear();
    impl->grad.shrink_to_fit();
  }
}

template void backward<float>(const BasicTensor<float>&);
template void backward<double>(const BasicTensor<double>&);

}  // namespace leafvit
