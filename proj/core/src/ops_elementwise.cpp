#include <algorithm>
#include <cmath>

#include "leafvit/error.hpp"
#include "leafvit/op_counter.hpp"
#include "leafvit/ops.hpp"

namespace leafvit {

namespace {
thread_local OpCounter* current_counter = nullptr;
}

CountingScope::CountingScope(OpCounter& counter) noexcept : previous_(current_counter) {
  current_counter = &counter;
}
CountingScope::~CountingScope() { current_counter = previous_; }

namespace detail {
OpCounter* active_counter() noexcept { return current_counter; }
}  // namespace detail

namespace {

template <class T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

template <class T>
T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

// Extents before, along and after `axis`.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.rank()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + s.str());
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.rank(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  detail::count_adds(out.size());
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, "add", [a, b](const auto& o) {
    for (auto* t : {&a, &b}) {
      if (T* g = detail::grad_target(*t)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
    }
  });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, "mul", [a, b](const auto& o) {
    if (T* g = detail::grad_target(a)) {
      const auto y = b.data();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * y[i];
    }
    if (T* g = detail::grad_target(b)) {
      const auto x = a.data();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * x[i];
    }
  });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return detail::make_result<T>(a.shape(), std::move(out), {&a}, "scale", [a, factor](const auto& o) {
    T* g = detail::grad_target(a);
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * factor;
  });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  double acc = 0;
  for (T v : a.data()) acc += v;
  detail::count_adds(a.numel());
  return detail::make_result<T>(Shape{}, {static_cast<T>(acc)}, {&a}, "sum", [a](const auto& o) {
    T* g = detail::grad_target(a);
    for (std::size_t i = 0; i < a.numel(); ++i) g[i] += o.grad[0];
  });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <class T>
BasicTensor<T> dot_const(const BasicTensor<T>& a, const BasicTensor<T>& weights) {
  require_same_shape(a, weights, "dot_const");
  double acc = 0;
  const auto x = a.data(), w = weights.data();
  for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]) * w[i];
  return detail::make_result<T>(Shape{}, {static_cast<T>(acc)}, {&a}, "dot_const", [a, weights](const auto& o) {
    T* g = detail::grad_target(a);
    const auto w = weights.data();
    for (std::size_t i = 0; i < w.size(); ++i) g[i] += o.grad[0] * w[i];
  });
}

template <class T>
BasicTensor<T> clamp_min(const BasicTensor<T>& a, T floor) {
  std::vector<T> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x[i], floor);
  return detail::make_result<T>(a.shape(), std::move(out), {&a}, "clamp_min", [a, floor](const auto& o) {
    T* g = detail::grad_target(a);
    const auto x = a.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > floor) g[i] += o.grad[i];
    }
  });
}

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] > T(0) ? v[i] : T(0);
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, "relu", [x](const auto& o) {
    T* g = detail::grad_target(x);
    const auto v = x.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] > T(0)) g[i] += o.grad[i];
    }
  });
}

template <class T>
BasicTensor<T> silu(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * sigmoid(v[i]);
  detail::count_exps(out.size());
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, "silu", [x](const auto& o) {
    T* g = detail::grad_target(x);
    const auto v = x.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const T s = sigmoid(v[i]);
      g[i] += o.grad[i] * s * (T(1) + v[i] * (T(1) - s));
    }
  });
}

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
  const AxisSplit sp = split_axis(x.shape(), axis);
  std::vector<T> out(x.numel());
  const auto v = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      T peak = v[base];
      for (std::size_t i = 1; i < sp.n; ++i) peak = std::max(peak, v[base + i * sp.inner]);
      T total = 0;
      for (std::size_t i = 0; i < sp.n; ++i) {
        const T e = std::exp(v[base + i * sp.inner] - peak);
        out[base + i * sp.inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < sp.n; ++i) out[base + i * sp.inner] /= total;
    }
  }
  detail::count_exps(x.numel());
  detail::count_divs(x.numel());
  auto result = detail::make_result<T>(x.shape(), std::move(out), {&x}, "softmax", {});
  if (result.requires_grad()) {
    // The adjoint needs the output values; read them from the node's owner.
    result.impl()->node->backward = [x, sp](const detail::TensorImpl<T>& o) {
      T* g = detail::grad_target(x);
      for (std::size_t ou = 0; ou < sp.outer; ++ou) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
          const std::size_t base = ou * sp.n * sp.inner + in;
          T dotp = 0;
          for (std::size_t i = 0; i < sp.n; ++i) dotp += o.grad[base + i * sp.inner] * o.data[base + i * sp.inner];
          for (std::size_t i = 0; i < sp.n; ++i) {
            const std::size_t k = base + i * sp.inner;
            g[k] += o.data[k] * (o.grad[k] - dotp);
          }
        }
      }
    };
  }
  return result;
}

template <class T>
BasicTensor<T> log_softmax(const BasicTensor<T>& x, std::size_t axis) {
  const AxisSplit sp = split_axis(x.shape(), axis);
  std::vector<T> out(x.numel());
  const auto v = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      T peak = v[base];
      for (std::size_t i = 1; i < sp.n; ++i) peak = std::max(peak, v[base + i * sp.inner]);
      T total = 0;
      for (std::size_t i = 0; i < sp.n; ++i) total += std::exp(v[base + i * sp.inner] - peak);
      const T log_total = std::log(total) + peak;
      for (std::size_t i = 0; i < sp.n; ++i) out[base + i * sp.inner] = v[base + i * sp.inner] - log_total;
    }
  }
  detail::count_exps(x.numel());
  auto result = detail::make_result<T>(x.shape(), std::move(out), {&x}, "log_softmax", {});
  if (result.requires_grad()) {
    result.impl()->node->backward = [x, sp](const detail::TensorImpl<T>& o) {
      T* g = detail::grad_target(x);
      for (std::size_t ou = 0; ou < sp.outer; ++ou) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
          const std::size_t base = ou * sp.n * sp.inner + in;
          T gsum = 0;
          for (std::size_t i = 0; i < sp.n; ++i) gsum += o.grad[base + i * sp.inner];
          for (std::size_t i = 0; i < sp.n; ++i) {
            const std::size_t k = base + i * sp.inner;
            g[k] += o.grad[k] - std::exp(o.data[k]) * gsum;
          }
        }
      }
    };
  }
  return result;
}

template <class T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, Mode mode, CounterRng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  if (mode == Mode::eval || p == 0.0) {
    std::vector<T> out(x.data().begin(), x.data().end());
    return detail::make_result<T>(x.shape(), std::move(out), {&x}, "dropout", [x](const auto& o) {
      T* g = detail::grad_target(x);
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    });
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < p ? T(0) : keep_scale;
  std::vector<T> out(x.numel());
  const auto v = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * mask[i];
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, "dropout",
                                [x, mask = std::move(mask)](const auto& o) {
                                  T* g = detail::grad_target(x);
                                  for (std::size_t i = 0; i < mask.size(); ++i) g[i] += o.grad[i] * mask[i];
                                });
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, const Shape& shape) {
  if (shape.numel() != x.numel()) {
    throw DimensionError("reshape: cannot view " + x.shape().str() + " as " + shape.str());
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::make_result<T>(shape, std::move(out), {&x}, "reshape", [x](const auto& o) {
    T* g = detail::grad_target(x);
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

#define LEAFVIT_INSTANTIATE(T)                                                                     \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                       \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                       \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                         \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                              \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                             \
  template BasicTensor<T> dot_const(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> clamp_min(const BasicTensor<T>&, T);                                     \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                             \
  template BasicTensor<T> silu(const BasicTensor<T>&);                                             \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::size_t);                             \
  template BasicTensor<T> log_softmax(const BasicTensor<T>&, std::size_t);                         \
  template BasicTensor<T> dropout(const BasicTensor<T>&, double, Mode, CounterRng&);               \
  template BasicTensor<T> reshape(const BasicTensor<T>&, const Shape&);

LEAFVIT_INSTANTIATE(float)
LEAFVIT_INSTANTIATE(double)
#undef LEAFVIT_INSTANTIATE

}  // namespace leafvit
