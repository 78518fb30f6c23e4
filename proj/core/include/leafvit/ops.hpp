#pragma once

#include <cstddef>

#include "leafvit/rng.hpp"
#include "leafvit/tensor.hpp"

// Primitive differentiable operations. Every op here records an adjoint when
// any input requires a gradient, and charges its multiply-accumulates to the
// active OpCounter. All ops are instantiated for float and double; the double
// path exists for finite-difference gradient checks.

namespace leafvit {

/// Layer behaviour switch for batch-norm and dropout.
enum class Mode { train, eval };

/// Where the channel axis lives for normalization over [B, ..., C] tensors.
enum class ChannelLayout { channels_first, channels_last };

// ---- elementwise & reductions ---------------------------------------------

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
/// Sum of all elements as a rank-0 tensor.
template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a);
template <class T>
BasicTensor<T> mean(const BasicTensor<T>& a);
/// Weighted sum Σ aᵢ·wᵢ with constant weights; the usual probe loss for gradient checks.
template <class T>
BasicTensor<T> dot_const(const BasicTensor<T>& a, const BasicTensor<T>& weights);
template <class T>
BasicTensor<T> clamp_min(const BasicTensor<T>& a, T floor);

template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x);
/// x·σ(x).
template <class T>
BasicTensor<T> silu(const BasicTensor<T>& x);
/// Max-shifted softmax along `axis`.
template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis);
template <class T>
BasicTensor<T> log_softmax(const BasicTensor<T>& x, std::size_t axis);

/// Eval mode and p == 0 are the identity (same storage is not shared; the
/// result is a fresh tensor). Train mode draws one uniform per element.
template <class T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, Mode mode, CounterRng& rng);

// ---- shape manipulation -----------------------------------------------------

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, const Shape& shape);
/// 2-D transpose.
template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& x);

// ---- dense algebra ----------------------------------------------------------

/// [m,k] x [k,n] -> [m,n]; records m·n·k MACs.
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// Row-wise affine map over the last axis: x[..., in]·w[in, out] + b[out].
/// `bias` may be undefined.
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias);
/// a[n, d] / c[n, 1], each row divided by its own scalar.
template <class T>
BasicTensor<T> div_rows(const BasicTensor<T>& a, const BasicTensor<T>& c);
/// a[..., k, d] ⊙ v[..., 1, d]: every row of each matrix gated by that matrix's vector.
template <class T>
BasicTensor<T> mul_rows_broadcast(const BasicTensor<T>& a, const BasicTensor<T>& v);

// ---- convolution & pooling --------------------------------------------------

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Zero-padded cross-correlation. x[B,Cin,H,W], w[Cout,Cin/g,kh,kw],
/// optional bias[Cout]. Records B·Cout·H'·W'·(Cin/g)·kh·kw MACs.
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      Conv2dParams params);

/// [B,C,H,W] -> [B,C,1,1] mean over H×W.
template <class T>
BasicTensor<T> adaptive_avg_pool2d(const BasicTensor<T>& x);
/// Max over kernel×kernel windows, no padding; ties route the gradient to
/// the first maximum in scan order.
template <class T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& x, std::size_t kernel, std::size_t stride);

/// Appends zero rows/columns at the bottom/right of [B,C,H,W].
template <class T>
BasicTensor<T> pad2d(const BasicTensor<T>& x, std::size_t bottom, std::size_t right);
/// Keeps the top-left height×width window of [B,C,H,W].
template <class T>
BasicTensor<T> crop2d(const BasicTensor<T>& x, std::size_t height, std::size_t width);

/// [B,d,H,W] -> [B, ph·pw, H·W/(ph·pw), d]. Sequence p = py·pw + px holds
/// the pixels at within-patch offset (py, px) of every patch, patches in
/// raster order.
template <class T>
BasicTensor<T> unfold_patches(const BasicTensor<T>& x, std::size_t ph, std::size_t pw);
/// Exact inverse of unfold_patches for an H×W map.
template <class T>
BasicTensor<T> fold_patches(const BasicTensor<T>& tokens, std::size_t ph, std::size_t pw, std::size_t height,
                            std::size_t width);

// ---- normalization ----------------------------------------------------------

inline constexpr double kNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Train mode normalizes with biased batch statistics over (B,H,W) and
/// updates the running buffers in place (unbiased variance, momentum 0.1).
/// Eval mode uses the running buffers only.
template <class T>
BasicTensor<T> batch_norm2d(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                            BasicTensor<T> running_mean, BasicTensor<T> running_var, Mode mode,
                            double eps = kNormEps, double momentum = kBatchNormMomentum);

/// Per-sample normalization over channel groups. x is [B, C, ...] for
/// channels_first or [B, ..., C] for channels_last; gamma/beta are [C].
template <class T>
BasicTensor<T> group_norm(const BasicTensor<T>& x, std::size_t num_groups, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps = kNormEps,
                          ChannelLayout layout = ChannelLayout::channels_first);

}  // namespace leafvit
