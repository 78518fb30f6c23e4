#pragma once

#include <cstddef>

#include "leafvit/ops.hpp"
#include "leafvit/rng.hpp"
#include "leafvit/tensor.hpp"

namespace leafvit {

/// Branch projections of separable self-attention for token width d.
/// Weights map tokens by right-multiplication (x·W). Biases may be left
/// undefined.
template <class T>
struct SeparableAttentionWeights {
  BasicTensor<T> input_w;  ///< [d, 1]: token -> context logit
  BasicTensor<T> input_b;  ///< [1]
  BasicTensor<T> key_w;    ///< [d, d]
  BasicTensor<T> key_b;    ///< [d]
  BasicTensor<T> value_w;  ///< [d, d]
  BasicTensor<T> value_b;  ///< [d]
  BasicTensor<T> out_w;    ///< [d, d]
  BasicTensor<T> out_b;    ///< [d]

  [[nodiscard]] std::size_t width() const { return key_w.dim(0); }
};

/// Separable self-attention over x[..., k, d]; every leading index is an
/// independent token sequence.
///
///   cs  = softmax_k(x·w_I + b_I)              context scores, one per token
///   cv  = Σᵢ csᵢ · (x·w_K + b_K)ᵢ             context vector of width d
///   out = (ReLU(x·w_V + b_V) ⊙ cv)·w_O + b_O  cv gates every token
///
/// Cost is linear in k: rows·(3d² + 2d) MACs for rows = total tokens.
template <class T>
BasicTensor<T> separable_self_attention(const BasicTensor<T>& x, const SeparableAttentionWeights<T>& w);

/// The context scores alone, shape [..., k]; each sequence sums to one.
template <class T>
BasicTensor<T> context_scores(const BasicTensor<T>& x, const SeparableAttentionWeights<T>& w);

/// Linear-transformer attention φ(Q)·(φ(K)ᵀ·V), each row normalized by
/// φ(Q)·(φ(K)ᵀ·1) clamped below at 1e-6, with φ = ReLU. Inputs are [n, d].
/// φ(K)ᵀ·V is formed first so cost grows linearly in n.
template <class T>
BasicTensor<T> kernel_linear_attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v);

inline constexpr double kKernelAttentionFloor = 1e-6;

enum class Activation { silu, relu };

/// Two-layer token MLP d -> h -> d. Biases may be undefined.
template <class T>
struct FeedForwardWeights {
  BasicTensor<T> w1;  ///< [d, h]
  BasicTensor<T> b1;  ///< [h]
  BasicTensor<T> w2;  ///< [h, d]
  BasicTensor<T> b2;  ///< [d]
};

/// drop(act(x·w1 + b1)·w2 + b2), without the residual.
template <class T>
BasicTensor<T> feed_forward_branch(const BasicTensor<T>& x, const FeedForwardWeights<T>& w, Activation act,
                                   double drop_p, Mode mode, CounterRng& rng);

/// x + feed_forward_branch(x).
template <class T>
BasicTensor<T> feed_forward(const BasicTensor<T>& x, const FeedForwardWeights<T>& w, Activation act, double drop_p,
                            Mode mode, CounterRng& rng);

}  // namespace leafvit
