#include "leafvit/attention.hpp"

#include <algorithm>
#include <cmath>

#include "gemm.hpp"
#include "leafvit/error.hpp"
#include "leafvit/op_counter.hpp"

namespace leafvit {

namespace {

template <class T>
void require_shape(const BasicTensor<T>& t, const Shape& expected, const char* what, bool optional) {
  if (!t.defined()) {
    if (optional) return;
    throw DimensionError(std::string("separable attention: missing ") + what);
  }
  if (t.shape() != expected) {
    throw DimensionError(std::string("separable attention: ") + what + " has shape " + t.shape().str() +
                         ", expected " + expected.str());
  }
}

template <class T>
void add_bias_rows(std::vector<T>& m, std::size_t rows, std::size_t cols, const BasicTensor<T>& bias) {
  if (!bias.defined()) return;
  const auto b = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m[r * cols + c] += b[c];
}

template <class T>
void add_colsum(const T* m, std::size_t rows, std::size_t cols, T* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c] += m[r * cols + c];
}

}  // namespace

template <class T>
BasicTensor<T> separable_self_attention(const BasicTensor<T>& x, const SeparableAttentionWeights<T>& w) {
  if (x.rank() < 2) throw DimensionError("separable attention expects tokens [..., k, d], got " + x.shape().str());
  const std::size_t d = x.dim(x.rank() - 1);
  const std::size_t k = x.dim(x.rank() - 2);
  const std::size_t seqs = x.numel() / (k * d);
  const std::size_t rows = seqs * k;
  require_shape(w.input_w, Shape{d, 1}, "input_w", false);
  require_shape(w.input_b, Shape{1}, "input_b", true);
  require_shape(w.key_w, Shape{d, d}, "key_w", false);
  require_shape(w.key_b, Shape{d}, "key_b", true);
  require_shape(w.value_w, Shape{d, d}, "value_w", false);
  require_shape(w.value_b, Shape{d}, "value_b", true);
  require_shape(w.out_w, Shape{d, d}, "out_w", false);
  require_shape(w.out_b, Shape{d}, "out_b", true);

  const T* xv = x.data().data();
  // Context logits -> scores per sequence.
  std::vector<T> cs(rows);
  detail::gemm<T>(false, false, rows, 1, d, xv, d, w.input_w.data().data(), 1, cs.data(), 1, false);
  add_bias_rows(cs, rows, 1, w.input_b);
  for (std::size_t s = 0; s < seqs; ++s) {
    T* a = cs.data() + s * k;
    const T peak = *std::max_element(a, a + k);
    T total = 0;
    for (std::size_t i = 0; i < k; ++i) total += (a[i] = std::exp(a[i] - peak));
    for (std::size_t i = 0; i < k; ++i) a[i] /= total;
  }

  std::vector<T> key(rows * d), value(rows * d);
  detail::gemm<T>(false, false, rows, d, d, xv, d, w.key_w.data().data(), d, key.data(), d, false);
  add_bias_rows(key, rows, d, w.key_b);
  detail::gemm<T>(false, false, rows, d, d, xv, d, w.value_w.data().data(), d, value.data(), d, false);
  add_bias_rows(value, rows, d, w.value_b);

  std::vector<T> cv(seqs * d);
  for (std::size_t s = 0; s < seqs; ++s) {
    detail::gemm<T>(false, false, 1, d, k, cs.data() + s * k, k, key.data() + s * k * d, d, cv.data() + s * d, d,
                    false);
  }

  std::vector<T> gated(rows * d);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* c = cv.data() + (r / k) * d;
    for (std::size_t j = 0; j < d; ++j) gated[r * d + j] = std::max(value[r * d + j], T(0)) * c[j];
  }
  std::vector<T> out(rows * d);
  detail::gemm<T>(false, false, rows, d, d, gated.data(), d, w.out_w.data().data(), d, out.data(), d, false);
  add_bias_rows(out, rows, d, w.out_b);
  gated.clear();
  gated.shrink_to_fit();

  detail::count_macs(static_cast<std::uint64_t>(rows) * (3 * d * d + 2 * d));
  detail::count_exps(rows);

  return detail::make_result<T>(
      x.shape(), std::move(out),
      {&x, &w.input_w, &w.input_b, &w.key_w, &w.key_b, &w.value_w, &w.value_b, &w.out_w, &w.out_b},
      "separable_self_attention",
      [x, w, cs = std::move(cs), key = std::move(key), value = std::move(value), cv = std::move(cv), seqs, k, d,
       rows](const auto& o) {
        const T* dout = o.grad.data();
        const T* xv = x.data().data();

        // Output projection.
        std::vector<T> gated(rows * d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* c = cv.data() + (r / k) * d;
          for (std::size_t j = 0; j < d; ++j) gated[r * d + j] = std::max(value[r * d + j], T(0)) * c[j];
        }
        if (T* g = detail::grad_target(w.out_w)) {
          detail::gemm<T>(true, false, d, d, rows, gated.data(), d, dout, d, g, d, true);
        }
        if (T* g = detail::grad_target(w.out_b)) add_colsum(dout, rows, d, g);
        std::vector<T> dgated(rows * d);
        detail::gemm<T>(false, true, rows, d, d, dout, d, w.out_w.data().data(), d, dgated.data(), d, false);

        // Gate: value branch and context vector.
        std::vector<T> dvalue(rows * d);
        std::vector<T> dcv(seqs * d, T(0));
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t s = r / k;
          for (std::size_t j = 0; j < d; ++j) {
            const T v = value[r * d + j];
            const T relu_v = v > T(0) ? v : T(0);
            dcv[s * d + j] += dgated[r * d + j] * relu_v;
            dvalue[r * d + j] = v > T(0) ? dgated[r * d + j] * cv[s * d + j] : T(0);
          }
        }

        // Context vector -> key branch and context scores.
        std::vector<T>& dkey = dgated;  // reuse storage
        std::vector<T> dlogit(rows);
        for (std::size_t s = 0; s < seqs; ++s) {
          const T* dc = dcv.data() + s * d;
          T weighted = 0;
          for (std::size_t i = 0; i < k; ++i) {
            const std::size_t r = s * k + i;
            T dcs = 0;
            for (std::size_t j = 0; j < d; ++j) {
              dkey[r * d + j] = cs[r] * dc[j];
              dcs += key[r * d + j] * dc[j];
            }
            dlogit[r] = dcs;
            weighted += cs[r] * dcs;
          }
          for (std::size_t i = 0; i < k; ++i) {
            const std::size_t r = s * k + i;
            dlogit[r] = cs[r] * (dlogit[r] - weighted);
          }
        }

        if (T* g = detail::grad_target(w.input_w)) {
          detail::gemm<T>(true, false, d, 1, rows, xv, d, dlogit.data(), 1, g, 1, true);
        }
        if (T* g = detail::grad_target(w.input_b)) add_colsum(dlogit.data(), rows, 1, g);
        if (T* g = detail::grad_target(w.key_w)) {
          detail::gemm<T>(true, false, d, d, rows, xv, d, dkey.data(), d, g, d, true);
        }
        if (T* g = detail::grad_target(w.key_b)) add_colsum(dkey.data(), rows, d, g);
        if (T* g = detail::grad_target(w.value_w)) {
          detail::gemm<T>(true, false, d, d, rows, xv, d, dvalue.data(), d, g, d, true);
        }
        if (T* g = detail::grad_target(w.value_b)) add_colsum(dvalue.data(), rows, d, g);
        if (T* gx = detail::grad_target(x)) {
          detail::gemm<T>(false, true, rows, d, 1, dlogit.data(), 1, w.input_w.data().data(), 1, gx, d, true);
          detail::gemm<T>(false, true, rows, d, d, dkey.data(), d, w.key_w.data().data(), d, gx, d, true);
          detail::gemm<T>(false, true, rows, d, d, dvalue.data(), d, w.value_w.data().data(), d, gx, d, true);
        }
      });
}

template <class T>
BasicTensor<T> context_scores(const BasicTensor<T>& x, const SeparableAttentionWeights<T>& w) {
  if (x.rank() < 2) throw DimensionError("context_scores expects tokens [..., k, d], got " + x.shape().str());
  auto logits = linear(x, w.input_w, w.input_b);  // [..., k, 1]
  auto dims = x.shape().dims();
  dims.pop_back();
  logits = reshape(logits, Shape(dims));
  return softmax(logits, dims.size() - 1);
}

template <class T>
BasicTensor<T> kernel_linear_attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v) {
  if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("kernel_linear_attention: q " + q.shape().str() + ", k " + k.shape().str() + ", v " +
                         v.shape().str() + " must share one [n, d] shape");
  }
  const std::size_t n = q.dim(0);
  const auto fq = relu(q);
  const auto fk = relu(k);
  const auto kv = matmul(transpose(fk), v);                         // [d, d]
  const auto numerator = matmul(fq, kv);                           // [n, d]
  const auto ones = BasicTensor<T>::full(Shape{1, n}, T(1));
  const auto key_sum = matmul(ones, fk);                           // [1, d]
  const auto denominator = matmul(fq, transpose(key_sum));         // [n, 1]
  return div_rows(numerator, clamp_min(denominator, static_cast<T>(kKernelAttentionFloor)));
}

template <class T>
BasicTensor<T> feed_forward_branch(const BasicTensor<T>& x, const FeedForwardWeights<T>& w, Activation act,
                                   double drop_p, Mode mode, CounterRng& rng) {
  if (!w.w1.defined() || !w.w2.defined() || w.w1.rank() != 2 || w.w2.rank() != 2 || w.w1.dim(1) != w.w2.dim(0) ||
      w.w2.dim(1) != w.w1.dim(0)) {
    throw DimensionError("feed_forward: weights must be [d, h] and [h, d]");
  }
  auto h = linear(x, w.w1, w.b1);
  h = act == Activation::silu ? silu(h) : relu(h);
  return dropout(linear(h, w.w2, w.b2), drop_p, mode, rng);
}

template <class T>
BasicTensor<T> feed_forward(const BasicTensor<T>& x, const FeedForwardWeights<T>& w, Activation act, double drop_p,
                            Mode mode, CounterRng& rng) {
  return add(x, feed_forward_branch(x, w, act, drop_p, mode, rng));
}

#define LEAFVIT_INSTANTIATE(T)                                                                                   \
  template BasicTensor<T> separable_self_attention(const BasicTensor<T>&, const SeparableAttentionWeights<T>&); \
  template BasicTensor<T> context_scores(const BasicTensor<T>&, const SeparableAttentionWeights<T>&);           \
  template BasicTensor<T> kernel_linear_attention(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                                  const BasicTensor<T>&);                                       \
  template BasicTensor<T> feed_forward_branch(const BasicTensor<T>&, const FeedForwardWeights<T>&, Activation,  \
                                              double, Mode, CounterRng&);                                       \
  template BasicTensor<T> feed_forward(const BasicTensor<T>&, const FeedForwardWeights<T>&, Activation, double, \
                                       Mode, CounterRng&);

LEAFVIT_INSTANTIATE(float)
LEAFVIT_INSTANTIATE(double)
#undef LEAFVIT_INSTANTIATE

}  // namespace leafvit
