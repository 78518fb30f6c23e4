#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "leafvit/attention.hpp"
#include "leafvit/ops.hpp"
#include "leafvit/rng.hpp"
#include "leafvit/tensor.hpp"

namespace leafvit {

enum class TensorRole { parameter, buffer };

/// A model tensor with its unique dotted name. Buffers (batch-norm running
/// statistics) are persisted but never trained or counted as parameters.
template <class T>
struct NamedParam {
  std::string name;
  BasicTensor<T> tensor;
  TensorRole role = TensorRole::parameter;
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

// ---- shared layer pieces ------------------------------------------------------

template <class T>
struct BatchNormParams {
  BasicTensor<T> gamma, beta, running_mean, running_var;
};

template <class T>
struct GroupNormParams {
  BasicTensor<T> gamma, beta;
};

/// Convolution (no bias) followed by batch-norm and an optional SiLU.
template <class T>
struct ConvBnAct {
  BasicTensor<T> weight;
  BatchNormParams<T> bn;
  Conv2dParams conv;
  bool activate = true;
};

template <class T>
BasicTensor<T> conv_bn_act(const BasicTensor<T>& x, const ConvBnAct<T>& layer, Mode mode);

/// He-normal with fan-out = kh·kw·Cout/groups; batch-norm gamma 1, beta 0,
/// running mean 0, running variance 1.
template <class T>
ConvBnAct<T> make_conv_bn_act(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Conv2dParams conv,
                              bool activate, CounterRng& rng);

template <class T>
BatchNormParams<T> make_batch_norm(std::size_t channels);
template <class T>
GroupNormParams<T> make_group_norm(std::size_t channels);
/// Dense [in, out] weight drawn from a normal with σ = 0.02 truncated at 2σ.
template <class T>
BasicTensor<T> make_dense_weight(std::size_t in, std::size_t out, CounterRng& rng);
template <class T>
BasicTensor<T> make_conv_weight(std::size_t out_ch, std::size_t in_per_group, std::size_t kernel, std::size_t groups,
                                CounterRng& rng);

template <class T>
void collect(const ConvBnAct<T>& layer, const std::string& prefix, ParamList<T>& out);
template <class T>
void collect(const BatchNormParams<T>& bn, const std::string& prefix, ParamList<T>& out);

// ---- inverted-residual bottleneck ---------------------------------------------

struct BottleneckBlockCfg {
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::size_t stride = 1;
  double expand_ratio = 2.0;

  [[nodiscard]] bool has_skip() const { return stride == 1 && in_ch == out_ch; }
  /// Width of the expanded (depthwise) stage: round(in_ch · expand_ratio).
  [[nodiscard]] std::size_t hidden_ch() const;
};

template <class T>
struct BottleneckWeights {
  ConvBnAct<T> expand;     ///< 1×1, in -> hidden, BN + SiLU
  ConvBnAct<T> depthwise;  ///< 3×3 depthwise, stride s, BN + SiLU
  ConvBnAct<T> project;    ///< 1×1, hidden -> out, BN only
};

template <class T>
BottleneckWeights<T> make_bottleneck(const BottleneckBlockCfg& cfg, CounterRng& rng);

/// expand -> depthwise -> project, plus the input when the skip applies.
template <class T>
BasicTensor<T> bottleneck_forward(const BasicTensor<T>& x, const BottleneckBlockCfg& cfg,
                                  const BottleneckWeights<T>& w, Mode mode);
/// The convolutional branch alone (no skip).
template <class T>
BasicTensor<T> bottleneck_branch(const BasicTensor<T>& x, const BottleneckBlockCfg& cfg,
                                 const BottleneckWeights<T>& w, Mode mode);

template <class T>
void collect(const BottleneckWeights<T>& w, const std::string& prefix, ParamList<T>& out);

// ---- MobileViTV2 block ----------------------------------------------------------

struct MobileViTV2BlockCfg {
  std::size_t channels = 0;
  std::size_t attn_dim = 0;
  std::size_t depth = 1;
  std::size_t patch_h = 2;
  std::size_t patch_w = 2;
  std::size_t ffn_mult = 2;
  double dropout = 0.0;  ///< applied to the feed-forward branch in train mode
};

template <class T>
struct TransformerLayerWeights {
  GroupNormParams<T> norm_attn;
  SeparableAttentionWeights<T> attn;
  GroupNormParams<T> norm_ffn;
  FeedForwardWeights<T> ffn;
};

template <class T>
struct MobileViTV2BlockWeights {
  ConvBnAct<T> local_dw;           ///< 3×3 depthwise, BN + SiLU
  BasicTensor<T> local_proj;       ///< 1×1 conv channels -> d, no bias
  std::vector<TransformerLayerWeights<T>> layers;
  GroupNormParams<T> final_norm;
  ConvBnAct<T> out_proj;           ///< 1×1 d -> channels, BN only
};

template <class T>
MobileViTV2BlockWeights<T> make_mobilevitv2_block(const MobileViTV2BlockCfg& cfg, CounterRng& rng);

/// Local conv representation, patch unfold (zero-padding H/W up to the patch
/// grid), `depth` pre-norm separable-attention layers, final norm, fold,
/// crop, projection back to `channels`. Output shape equals input shape.
template <class T>
BasicTensor<T> mobilevitv2_block_forward(const BasicTensor<T>& x, const MobileViTV2BlockCfg& cfg,
                                         const MobileViTV2BlockWeights<T>& w, Mode mode, CounterRng& rng);

/// One pre-norm transformer layer over tokens [B, P, N, d].
template <class T>
BasicTensor<T> transformer_layer_forward(const BasicTensor<T>& tokens, const TransformerLayerWeights<T>& w,
                                         double drop_p, Mode mode, CounterRng& rng);

template <class T>
void collect(const MobileViTV2BlockWeights<T>& w, const std::string& prefix, ParamList<T>& out);

}  // namespace leafvit
