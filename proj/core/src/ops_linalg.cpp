#include "gemm.hpp"
#include "leafvit/error.hpp"
#include "leafvit/op_counter.hpp"
#include "leafvit/ops.hpp"

namespace leafvit {

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + a.shape().str() + " by " + b.shape().str());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  detail::gemm<T>(false, false, m, n, k, a.data().data(), k, b.data().data(), n, out.data(), n, false);
  detail::count_macs(static_cast<std::uint64_t>(m) * n * k);
  return detail::make_result<T>(Shape{m, n}, std::move(out), {&a, &b}, "matmul", [a, b, m, n, k](const auto& o) {
    if (T* ga = detail::grad_target(a)) {
      detail::gemm<T>(false, true, m, k, n, o.grad.data(), n, b.data().data(), n, ga, k, true);
    }
    if (T* gb = detail::grad_target(b)) {
      detail::gemm<T>(true, false, k, n, m, a.data().data(), k, o.grad.data(), n, gb, n, true);
    }
  });
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("transpose expects a matrix, got " + x.shape().str());
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(x.numel());
  const auto v = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  return detail::make_result<T>(Shape{c, r}, std::move(out), {&x}, "transpose", [x, r, c](const auto& o) {
    T* g = detail::grad_target(x);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
  });
}

template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  if (x.rank() < 1 || weight.rank() != 2 || x.dim(x.rank() - 1) != weight.dim(0)) {
    throw DimensionError("linear: input " + x.shape().str() + " does not match weight " + weight.shape().str());
  }
  const std::size_t in = weight.dim(0), out_features = weight.dim(1);
  const std::size_t rows = x.numel() / in;
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_features)) {
    throw DimensionError("linear: bias " + bias.shape().str() + " does not match weight " + weight.shape().str());
  }
  std::vector<T> out(rows * out_features);
  detail::gemm<T>(false, false, rows, out_features, in, x.data().data(), in, weight.data().data(), out_features,
                  out.data(), out_features, false);
  if (bias.defined()) {
    const auto bv = bias.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_features; ++j) out[r * out_features + j] += bv[j];
  }
  detail::count_macs(static_cast<std::uint64_t>(rows) * in * out_features);

  auto dims = x.shape().dims();
  dims.back() = out_features;
  return detail::make_result<T>(
      Shape(std::move(dims)), std::move(out), {&x, &weight, &bias}, "linear",
      [x, weight, bias, rows, in, out_features](const auto& o) {
        if (T* gx = detail::grad_target(x)) {
          detail::gemm<T>(false, true, rows, in, out_features, o.grad.data(), out_features, weight.data().data(),
                          out_features, gx, in, true);
        }
        if (T* gw = detail::grad_target(weight)) {
          detail::gemm<T>(true, false, in, out_features, rows, x.data().data(), in, o.grad.data(), out_features, gw,
                          out_features, true);
        }
        if (T* gb = detail::grad_target(bias)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < out_features; ++j) gb[j] += o.grad[r * out_features + j];
        }
      });
}

template <class T>
BasicTensor<T> div_rows(const BasicTensor<T>& a, const BasicTensor<T>& c) {
  if (a.rank() != 2 || c.rank() != 2 || c.dim(1) != 1 || c.dim(0) != a.dim(0)) {
    throw DimensionError("div_rows: cannot divide " + a.shape().str() + " by " + c.shape().str());
  }
  const std::size_t n = a.dim(0), d = a.dim(1);
  std::vector<T> out(a.numel());
  const auto av = a.data(), cv = c.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = av[i * d + j] / cv[i];
  detail::count_divs(out.size());
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &c}, "div_rows", [a, c, n, d](const auto& o) {
    const auto av = a.data(), cv = c.data();
    if (T* ga = detail::grad_target(a)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += o.grad[i * d + j] / cv[i];
    }
    if (T* gc = detail::grad_target(c)) {
      for (std::size_t i = 0; i < n; ++i) {
        T acc = 0;
        for (std::size_t j = 0; j < d; ++j) acc += o.grad[i * d + j] * av[i * d + j];
        gc[i] -= acc / (cv[i] * cv[i]);
      }
    }
  });
}

template <class T>
BasicTensor<T> mul_rows_broadcast(const BasicTensor<T>& a, const BasicTensor<T>& v) {
  const std::size_t r = a.rank();
  bool ok = r >= 2 && v.rank() == r && v.dim(r - 2) == 1 && v.dim(r - 1) == a.dim(r - 1);
  for (std::size_t i = 0; ok && i + 2 < r; ++i) ok = v.dim(i) == a.dim(i);
  if (!ok) throw DimensionError("mul_rows_broadcast: cannot gate " + a.shape().str() + " by " + v.shape().str());
  const std::size_t k = a.dim(r - 2), d = a.dim(r - 1), mats = a.numel() / (k * d);
  std::vector<T> out(a.numel());
  const auto av = a.data(), vv = v.data();
  for (std::size_t m = 0; m < mats; ++m)
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < d; ++j) out[(m * k + i) * d + j] = av[(m * k + i) * d + j] * vv[m * d + j];
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &v}, "mul_rows_broadcast",
                                [a, v, k, d, mats](const auto& o) {
                                  const auto av = a.data(), vv = v.data();
                                  T* ga = detail::grad_target(a);
                                  T* gv = detail::grad_target(v);
                                  for (std::size_t m = 0; m < mats; ++m)
                                    for (std::size_t i = 0; i < k; ++i)
                                      for (std::size_t j = 0; j < d; ++j) {
                                        const std::size_t idx = (m * k + i) * d + j;
                                        if (ga) ga[idx] += o.grad[idx] * vv[m * d + j];
                                        if (gv) gv[m * d + j] += o.grad[idx] * av[idx];
                                      }
                                });
}

#define LEAFVIT_INSTANTIATE(T)                                                                            \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                           \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                               \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);    \
  template BasicTensor<T> div_rows(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> mul_rows_broadcast(const BasicTensor<T>&, const BasicTensor<T>&);

LEAFVIT_INSTANTIATE(float)
LEAFVIT_INSTANTIATE(double)
#undef LEAFVIT_INSTANTIATE

}  // namespace leafvit
