#include "leafvit/blocks.hpp"

#include <cmath>

#include "leafvit/error.hpp"

namespace leafvit {

namespace {

template <class T>
BasicTensor<T> parameter(BasicTensor<T> t) {
  t.set_requires_grad(true);
  return t;
}

template <class T>
void push(ParamList<T>& out, std::string name, const BasicTensor<T>& t, TensorRole role = TensorRole::parameter) {
  if (t.defined()) out.push_back({std::move(name), t, role});
}

template <class T>
void collect_group_norm(const GroupNormParams<T>& gn, const std::string& prefix, ParamList<T>& out) {
  push(out, prefix + ".weight", gn.gamma);
  push(out, prefix + ".bias", gn.beta);
}

}  // namespace

// ---- shared pieces -------------------------------------------------------------

template <class T>
BasicTensor<T> conv_bn_act(const BasicTensor<T>& x, const ConvBnAct<T>& layer, Mode mode) {
  auto y = conv2d(x, layer.weight, BasicTensor<T>{}, layer.conv);
  y = batch_norm2d(y, layer.bn.gamma, layer.bn.beta, layer.bn.running_mean, layer.bn.running_var, mode);
  return layer.activate ? silu(y) : y;
}

template <class T>
BasicTensor<T> make_conv_weight(std::size_t out_ch, std::size_t in_per_group, std::size_t kernel, std::size_t groups,
                                CounterRng& rng) {
  const double fan_out = static_cast<double>(kernel * kernel * out_ch) / static_cast<double>(groups);
  const double stddev = std::sqrt(2.0 / fan_out);
  Shape shape{out_ch, in_per_group, kernel, kernel};
  std::vector<T> data(shape.numel());
  for (auto& v : data) v = static_cast<T>(rng.normal() * stddev);
  return parameter(BasicTensor<T>(shape, std::move(data)));
}

template <class T>
BasicTensor<T> make_dense_weight(std::size_t in, std::size_t out, CounterRng& rng) {
  Shape shape{in, out};
  std::vector<T> data(shape.numel());
  for (auto& v : data) v = static_cast<T>(rng.truncated_normal(0.02));
  return parameter(BasicTensor<T>(shape, std::move(data)));
}

template <class T>
BatchNormParams<T> make_batch_norm(std::size_t channels) {
  return {parameter(BasicTensor<T>::full(Shape{channels}, T(1))), parameter(BasicTensor<T>::zeros(Shape{channels})),
          BasicTensor<T>::zeros(Shape{channels}), BasicTensor<T>::full(Shape{channels}, T(1))};
}

template <class T>
GroupNormParams<T> make_group_norm(std::size_t channels) {
  return {parameter(BasicTensor<T>::full(Shape{channels}, T(1))), parameter(BasicTensor<T>::zeros(Shape{channels}))};
}

template <class T>
ConvBnAct<T> make_conv_bn_act(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Conv2dParams conv,
                              bool activate, CounterRng& rng) {
  if (in_ch % conv.groups != 0) throw ConfigError("conv groups must divide input channels");
  return {make_conv_weight<T>(out_ch, in_ch / conv.groups, kernel, conv.groups, rng), make_batch_norm<T>(out_ch), conv,
          activate};
}

template <class T>
void collect(const BatchNormParams<T>& bn, const std::string& prefix, ParamList<T>& out) {
  push(out, prefix + ".weight", bn.gamma);
  push(out, prefix + ".bias", bn.beta);
  push(out, prefix + ".running_mean", bn.running_mean, TensorRole::buffer);
  push(out, prefix + ".running_var", bn.running_var, TensorRole::buffer);
}

template <class T>
void collect(const ConvBnAct<T>& layer, const std::string& prefix, ParamList<T>& out) {
  push(out, prefix + ".conv.weight", layer.weight);
  collect(layer.bn, prefix + ".bn", out);
}

// ---- bottleneck ------------------------------------------------------------------

std::size_t BottleneckBlockCfg::hidden_ch() const {
  return static_cast<std::size_t>(std::llround(static_cast<double>(in_ch) * expand_ratio));
}

template <class T>
BottleneckWeights<T> make_bottleneck(const BottleneckBlockCfg& cfg, CounterRng& rng) {
  if (cfg.in_ch == 0 || cfg.out_ch == 0 || cfg.expand_ratio <= 0.0 || cfg.hidden_ch() == 0) {
    throw ConfigError("bottleneck: channel counts and expand ratio must be positive");
  }
  if (cfg.stride != 1 && cfg.stride != 2) throw ConfigError("bottleneck: stride must be 1 or 2");
  const std::size_t hidden = cfg.hidden_ch();
  BottleneckWeights<T> w;
  w.expand = make_conv_bn_act<T>(cfg.in_ch, hidden, 1, {1, 0, 1}, true, rng);
  w.depthwise = make_conv_bn_act<T>(hidden, hidden, 3, {cfg.stride, 1, hidden}, true, rng);
  w.project = make_conv_bn_act<T>(hidden, cfg.out_ch, 1, {1, 0, 1}, false, rng);
  return w;
}

template <class T>
BasicTensor<T> bottleneck_branch(const BasicTensor<T>& x, const BottleneckBlockCfg& cfg,
                                 const BottleneckWeights<T>& w, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != cfg.in_ch) {
    throw DimensionError("bottleneck: expected " + std::to_string(cfg.in_ch) + " input channels, got " +
                         x.shape().str());
  }
  auto y = conv_bn_act(x, w.expand, mode);
  y = conv_bn_act(y, w.depthwise, mode);
  return conv_bn_act(y, w.project, mode);
}

template <class T>
BasicTensor<T> bottleneck_forward(const BasicTensor<T>& x, const BottleneckBlockCfg& cfg,
                                  const BottleneckWeights<T>& w, Mode mode) {
  auto y = bottleneck_branch(x, cfg, w, mode);
  return cfg.has_skip() ? add(y, x) : y;
}

template <class T>
void collect(const BottleneckWeights<T>& w, const std::string& prefix, ParamList<T>& out) {
  collect(w.expand, prefix + ".conv1_1x1", out);
  collect(w.depthwise, prefix + ".conv2_kxk", out);
  collect(w.project, prefix + ".conv3_1x1", out);
}

// ---- MobileViTV2 block -------------------------------------------------------------

template <class T>
MobileViTV2BlockWeights<T> make_mobilevitv2_block(const MobileViTV2BlockCfg& cfg, CounterRng& rng) {
  if (cfg.channels == 0 || cfg.attn_dim == 0 || cfg.depth == 0 || cfg.patch_h == 0 || cfg.patch_w == 0 ||
      cfg.ffn_mult == 0) {
    throw ConfigError("mobilevitv2 block: channels, attention width, depth, patch and ffn multiplier must be >= 1");
  }
  const std::size_t c = cfg.channels, d = cfg.attn_dim, h = cfg.ffn_mult * cfg.attn_dim;
  MobileViTV2BlockWeights<T> w;
  w.local_dw = make_conv_bn_act<T>(c, c, 3, {1, 1, c}, true, rng);
  w.local_proj = make_conv_weight<T>(d, c, 1, 1, rng);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    TransformerLayerWeights<T> layer;
    layer.norm_attn = make_group_norm<T>(d);
    layer.attn.input_w = make_dense_weight<T>(d, 1, rng);
    layer.attn.input_b = parameter(BasicTensor<T>::zeros(Shape{1}));
    layer.attn.key_w = make_dense_weight<T>(d, d, rng);
    layer.attn.key_b = parameter(BasicTensor<T>::zeros(Shape{d}));
    layer.attn.value_w = make_dense_weight<T>(d, d, rng);
    layer.attn.value_b = parameter(BasicTensor<T>::zeros(Shape{d}));
    layer.attn.out_w = make_dense_weight<T>(d, d, rng);
    layer.attn.out_b = parameter(BasicTensor<T>::zeros(Shape{d}));
    layer.norm_ffn = make_group_norm<T>(d);
    layer.ffn.w1 = make_dense_weight<T>(d, h, rng);
    layer.ffn.b1 = parameter(BasicTensor<T>::zeros(Shape{h}));
    layer.ffn.w2 = make_dense_weight<T>(h, d, rng);
    layer.ffn.b2 = parameter(BasicTensor<T>::zeros(Shape{d}));
    w.layers.push_back(std::move(layer));
  }
  w.final_norm = make_group_norm<T>(d);
  w.out_proj = make_conv_bn_act<T>(d, c, 1, {1, 0, 1}, false, rng);
  return w;
}

template <class T>
BasicTensor<T> transformer_layer_forward(const BasicTensor<T>& tokens, const TransformerLayerWeights<T>& w,
                                         double drop_p, Mode mode, CounterRng& rng) {
  constexpr auto last = ChannelLayout::channels_last;
  auto normed = group_norm(tokens, 1, w.norm_attn.gamma, w.norm_attn.beta, kNormEps, last);
  auto t = add(tokens, separable_self_attention(normed, w.attn));
  normed = group_norm(t, 1, w.norm_ffn.gamma, w.norm_ffn.beta, kNormEps, last);
  return add(t, feed_forward_branch(normed, w.ffn, Activation::silu, drop_p, mode, rng));
}

template <class T>
BasicTensor<T> mobilevitv2_block_forward(const BasicTensor<T>& x, const MobileViTV2BlockCfg& cfg,
                                         const MobileViTV2BlockWeights<T>& w, Mode mode, CounterRng& rng) {
  if (x.rank() != 4 || x.dim(1) != cfg.channels) {
    throw DimensionError("mobilevitv2 block: expected " + std::to_string(cfg.channels) + " input channels, got " +
                         x.shape().str());
  }
  const std::size_t h = x.dim(2), wd = x.dim(3);
  auto y = conv_bn_act(x, w.local_dw, mode);
  y = conv2d(y, w.local_proj, BasicTensor<T>{}, Conv2dParams{1, 0, 1});

  const std::size_t hp = (h + cfg.patch_h - 1) / cfg.patch_h * cfg.patch_h;
  const std::size_t wp = (wd + cfg.patch_w - 1) / cfg.patch_w * cfg.patch_w;
  if (hp != h || wp != wd) y = pad2d(y, hp - h, wp - wd);

  auto tokens = unfold_patches(y, cfg.patch_h, cfg.patch_w);
  for (const auto& layer : w.layers) tokens = transformer_layer_forward(tokens, layer, cfg.dropout, mode, rng);
  tokens = group_norm(tokens, 1, w.final_norm.gamma, w.final_norm.beta, kNormEps, ChannelLayout::channels_last);
  y = fold_patches(tokens, cfg.patch_h, cfg.patch_w, hp, wp);

  if (hp != h || wp != wd) y = crop2d(y, h, wd);
  return conv_bn_act(y, w.out_proj, mode);
}

template <class T>
void collect(const MobileViTV2BlockWeights<T>& w, const std::string& prefix, ParamList<T>& out) {
  collect(w.local_dw, prefix + ".conv_kxk", out);
  push(out, prefix + ".conv_1x1.weight", w.local_proj);
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    const auto& l = w.layers[i];
    const std::string p = prefix + ".transformer." + std::to_string(i);
    collect_group_norm(l.norm_attn, p + ".norm1", out);
    push(out, p + ".attn.input.weight", l.attn.input_w);
    push(out, p + ".attn.input.bias", l.attn.input_b);
    push(out, p + ".attn.key.weight", l.attn.key_w);
    push(out, p + ".attn.key.bias", l.attn.key_b);
    push(out, p + ".attn.value.weight", l.attn.value_w);
    push(out, p + ".attn.value.bias", l.attn.value_b);
    push(out, p + ".attn.out_proj.weight", l.attn.out_w);
    push(out, p + ".attn.out_proj.bias", l.attn.out_b);
    collect_group_norm(l.norm_ffn, p + ".norm2", out);
    push(out, p + ".mlp.fc1.weight", l.ffn.w1);
    push(out, p + ".mlp.fc1.bias", l.ffn.b1);
    push(out, p + ".mlp.fc2.weight", l.ffn.w2);
    push(out, p + ".mlp.fc2.bias", l.ffn.b2);
  }
  collect_group_norm(w.final_norm, prefix + ".norm", out);
  collect(w.out_proj, prefix + ".conv_proj", out);
}

#define LEAFVIT_INSTANTIATE(T)                                                                                       \
  template BasicTensor<T> conv_bn_act(const BasicTensor<T>&, const ConvBnAct<T>&, Mode);                            \
  template ConvBnAct<T> make_conv_bn_act<T>(std::size_t, std::size_t, std::size_t, Conv2dParams, bool, CounterRng&); \
  template BatchNormParams<T> make_batch_norm<T>(std::size_t);                                                      \
  template GroupNormParams<T> make_group_norm<T>(std::size_t);                                                      \
  template BasicTensor<T> make_dense_weight<T>(std::size_t, std::size_t, CounterRng&);                              \
  template BasicTensor<T> make_conv_weight<T>(std::size_t, std::size_t, std::size_t, std::size_t, CounterRng&);     \
  template void collect(const ConvBnAct<T>&, const std::string&, ParamList<T>&);                                    \
  template void collect(const BatchNormParams<T>&, const std::string&, ParamList<T>&);                              \
  template BottleneckWeights<T> make_bottleneck<T>(const BottleneckBlockCfg&, CounterRng&);                         \
  template BasicTensor<T> bottleneck_forward(const BasicTensor<T>&, const BottleneckBlockCfg&,                      \
                                             const BottleneckWeights<T>&, Mode);                                    \
  template BasicTensor<T> bottleneck_branch(const BasicTensor<T>&, const BottleneckBlockCfg&,                       \
                                            const BottleneckWeights<T>&, Mode);                                     \
  template void collect(const BottleneckWeights<T>&, const std::string&, ParamList<T>&);                            \
  template MobileViTV2BlockWeights<T> make_mobilevitv2_block<T>(const MobileViTV2BlockCfg&, CounterRng&);           \
  template BasicTensor<T> mobilevitv2_block_forward(const BasicTensor<T>&, const MobileViTV2BlockCfg&,              \
                                                    const MobileViTV2BlockWeights<T>&, Mode, CounterRng&);          \
  template BasicTensor<T> transformer_layer_forward(const BasicTensor<T>&, const TransformerLayerWeights<T>&,       \
                                                    double, Mode, CounterRng&);                                     \
  template void collect(const MobileViTV2BlockWeights<T>&, const std::string&, ParamList<T>&);

LEAFVIT_INSTANTIATE(float)
LEAFVIT_INSTANTIATE(double)
#undef LEAFVIT_INSTANTIATE

}  // namespace leafvit
