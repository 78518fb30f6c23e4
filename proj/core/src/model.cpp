#include "leafvit/model.hpp"

#include <algorithm>

#include "leafvit/error.hpp"
#include "leafvit/op_counter.hpp"

namespace leafvit {

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::mobilevitv2_050: return "mobilevitv2_050";
    case Architecture::baseline_cnn: return "baseline_cnn";
    case Architecture::custom: return "custom";
  }
  return "custom";
}

void Layer::collect(const std::string&, ParamList<float>&) const {}

namespace {

Tensor trainable(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

void push(ParamList<float>& out, std::string name, const Tensor& t, TensorRole role = TensorRole::parameter) {
  if (t.defined()) out.push_back({std::move(name), t, role});
}

class DenseLayer final : public Layer {
 public:
  DenseLayer(std::size_t in, std::size_t out, CounterRng& rng)
      : weight_(make_dense_weight<float>(in, out, rng)), bias_(trainable(Tensor::zeros(Shape{out}))) {}
  Tensor forward(const Tensor& x, Mode, CounterRng&) const override { return linear(x, weight_, bias_); }
  void collect(const std::string& prefix, ParamList<float>& out) const override {
    push(out, prefix + ".weight", weight_);
    push(out, prefix + ".bias", bias_);
  }
  std::string kind() const override { return "dense"; }

 private:
  Tensor weight_, bias_;
};

class ConvLayer final : public Layer {
 public:
  ConvLayer(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Conv2dParams params, bool bias,
            CounterRng& rng)
      : params_(params) {
    if (params.groups == 0 || in_ch % params.groups != 0) throw ConfigError("conv2d: groups must divide channels");
    weight_ = make_conv_weight<float>(out_ch, in_ch / params.groups, kernel, params.groups, rng);
    if (bias) bias_ = trainable(Tensor::zeros(Shape{out_ch}));
  }
  Tensor forward(const Tensor& x, Mode, CounterRng&) const override {
    return leafvit::conv2d(x, weight_, bias_, params_);
  }
  void collect(const std::string& prefix, ParamList<float>& out) const override {
    push(out, prefix + ".weight", weight_);
    push(out, prefix + ".bias", bias_);
  }
  std::string kind() const override { return "conv2d"; }

 private:
  Conv2dParams params_;
  Tensor weight_, bias_;
};

class ConvBnActLayer final : public Layer {
 public:
  explicit ConvBnActLayer(ConvBnAct<float> w) : w_(std::move(w)) {}
  Tensor forward(const Tensor& x, Mode mode, CounterRng&) const override {
    return leafvit::conv_bn_act(x, w_, mode);
  }
  void collect(const std::string& prefix, ParamList<float>& out) const override {
    leafvit::collect(w_, prefix, out);
  }
  std::string kind() const override { return "conv_bn_act"; }

 private:
  ConvBnAct<float> w_;
};

class BatchNormLayer final : public Layer {
 public:
  explicit BatchNormLayer(std::size_t channels) : bn_(make_batch_norm<float>(channels)) {}
  Tensor forward(const Tensor& x, Mode mode, CounterRng&) const override {
    return batch_norm2d(x, bn_.gamma, bn_.beta, bn_.running_mean, bn_.running_var, mode);
  }
  void collect(const std::string& prefix, ParamList<float>& out) const override {
    leafvit::collect(bn_, prefix, out);
  }
  std::string kind() const override { return "batch_norm"; }

 private:
  BatchNormParams<float> bn_;
};

class ActivationLayer final : public Layer {
 public:
  explicit ActivationLayer(bool use_silu) : silu_(use_silu) {}
  Tensor forward(const Tensor& x, Mode, CounterRng&) const override {
    return silu_ ? leafvit::silu(x) : leafvit::relu(x);
  }
  std::string kind() const override { return silu_ ? "silu" : "relu"; }

 private:
  bool silu_;
};

class MaxPoolLayer final : public Layer {
 public:
  MaxPoolLayer(std::size_t kernel, std::size_t stride) : kernel_(kernel), stride_(stride) {}
  Tensor forward(const Tensor& x, Mode, CounterRng&) const override { return max_pool2d(x, kernel_, stride_); }
  std::string kind() const override { return "max_pool"; }

 private:
  std::size_t kernel_, stride_;
};

class FlattenLayer final : public Layer {
 public:
  explicit FlattenLayer(bool pool) : pool_(pool) {}
  Tensor forward(const Tensor& x, Mode, CounterRng&) const override {
    Tensor y = pool_ ? adaptive_avg_pool2d(x) : x;
    if (y.rank() < 2) throw DimensionError("flatten: expected a batched tensor, got " + y.shape().str());
    return reshape(y, Shape{y.dim(0), y.numel() / y.dim(0)});
  }
  std::string kind() const override { return pool_ ? "global_avg_pool" : "flatten"; }

 private:
  bool pool_;
};

class DropoutLayer final : public Layer {
 public:
  explicit DropoutLayer(double p) : p_(p) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must lie in [0, 1)");
  }
  Tensor forward(const Tensor& x, Mode mode, CounterRng& rng) const override {
    return leafvit::dropout(x, p_, mode, rng);
  }
  std::string kind() const override { return "dropout"; }

 private:
  double p_;
};

class BottleneckLayer final : public Layer {
 public:
  BottleneckLayer(const BottleneckBlockCfg& cfg, CounterRng& rng) : cfg_(cfg), w_(make_bottleneck<float>(cfg, rng)) {}
  Tensor forward(const Tensor& x, Mode mode, CounterRng&) const override {
    return bottleneck_forward(x, cfg_, w_, mode);
  }
  void collect(const std::string& prefix, ParamList<float>& out) const override {
    leafvit::collect(w_, prefix, out);
  }
  std::string kind() const override { return "bottleneck"; }

 private:
  BottleneckBlockCfg cfg_;
  BottleneckWeights<float> w_;
};

class MobileViTLayer final : public Layer {
 public:
  MobileViTLayer(const MobileViTV2BlockCfg& cfg, CounterRng& rng)
      : cfg_(cfg), w_(make_mobilevitv2_block<float>(cfg, rng)) {}
  Tensor forward(const Tensor& x, Mode mode, CounterRng& rng) const override {
    return mobilevitv2_block_forward(x, cfg_, w_, mode, rng);
  }
  void collect(const std::string& prefix, ParamList<float>& out) const override {
    leafvit::collect(w_, prefix, out);
  }
  std::string kind() const override { return "mobilevitv2"; }

 private:
  MobileViTV2BlockCfg cfg_;
  MobileViTV2BlockWeights<float> w_;
};

}  // namespace

namespace layers {

std::unique_ptr<Layer> dense(std::size_t in, std::size_t out, CounterRng& rng) {
  return std::make_unique<DenseLayer>(in, out, rng);
}
std::unique_ptr<Layer> conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Conv2dParams params,
                              bool bias, CounterRng& rng) {
  return std::make_unique<ConvLayer>(in_ch, out_ch, kernel, params, bias, rng);
}
std::unique_ptr<Layer> conv_bn_act(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Conv2dParams params,
                                   bool activate, CounterRng& rng) {
  return std::make_unique<ConvBnActLayer>(make_conv_bn_act<float>(in_ch, out_ch, kernel, params, activate, rng));
}
std::unique_ptr<Layer> batch_norm(std::size_t channels) { return std::make_unique<BatchNormLayer>(channels); }
std::unique_ptr<Layer> relu() { return std::make_unique<ActivationLayer>(false); }
std::unique_ptr<Layer> silu() { return std::make_unique<ActivationLayer>(true); }
std::unique_ptr<Layer> max_pool(std::size_t kernel, std::size_t stride) {
  return std::make_unique<MaxPoolLayer>(kernel, stride);
}
std::unique_ptr<Layer> global_avg_pool() { return std::make_unique<FlattenLayer>(true); }
std::unique_ptr<Layer> flatten() { return std::make_unique<FlattenLayer>(false); }
std::unique_ptr<Layer> dropout(double p) { return std::make_unique<DropoutLayer>(p); }
std::unique_ptr<Layer> bottleneck(const BottleneckBlockCfg& cfg, CounterRng& rng) {
  return std::make_unique<BottleneckLayer>(cfg, rng);
}
std::unique_ptr<Layer> mobilevitv2(const MobileViTV2BlockCfg& cfg, CounterRng& rng) {
  return std::make_unique<MobileViTLayer>(cfg, rng);
}

}  // namespace layers

// ---- graph -------------------------------------------------------------------------

ModelGraph::ModelGraph(Architecture arch, std::size_t num_classes, std::size_t input_size, std::uint64_t seed)
    : arch_(arch), num_classes_(num_classes), input_size_(input_size), rng_(seed, kDropoutStream) {}

void ModelGraph::add(std::string name, std::unique_ptr<Layer> layer) {
  if (!layer) throw ContractError("model: null layer '" + name + "'");
  if (std::find(names_.begin(), names_.end(), name) != names_.end()) {
    throw ContractError("model: duplicate layer name '" + name + "'");
  }
  names_.push_back(std::move(name));
  layers_.push_back(std::move(layer));
}

Tensor ModelGraph::forward_range(const Tensor& x, std::size_t begin, std::size_t end, Mode mode) const {
  if (begin > end || end > layers_.size()) throw ContractError("model: layer range out of bounds");
  Tensor y = x;
  for (std::size_t i = begin; i < end; ++i) y = layers_[i]->forward(y, mode, rng_);
  return y;
}

ParamList<float> ModelGraph::named_tensors(std::size_t begin, std::size_t end) const {
  ParamList<float> out;
  for (std::size_t i = begin; i < end && i < layers_.size(); ++i) layers_[i]->collect(names_[i], out);
  return out;
}

ParamList<float> ModelGraph::named_tensors() const { return named_tensors(0, layers_.size()); }

std::vector<LayerTrace> ModelGraph::trace(const Shape& input) const {
  NoGradGuard no_grad;
  std::vector<LayerTrace> out;
  Tensor y = Tensor::zeros(input);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    y = layers_[i]->forward(y, Mode::eval, rng_);
    out.push_back({names_[i], y.shape()});
  }
  return out;
}

// ---- builders ----------------------------------------------------------------------

ModelGraph build_mobilevitv2_050(std::size_t num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("mobilevitv2_050: num_classes must be >= 2");
  ModelGraph m(Architecture::mobilevitv2_050, num_classes, kMobileVitInput, seed);
  CounterRng rng(seed);

  m.add("stem", layers::conv_bn_act(3, 16, 3, {2, 1, 1}, true, rng));

  struct Stage {
    std::vector<BottleneckBlockCfg> bottlenecks;
    std::size_t attn_dim, depth;  // depth 0: no attention block
  };
  const std::vector<Stage> stages = {
      {{{16, 32, 1}}, 0, 0},
      {{{32, 64, 2}, {64, 64, 1}}, 0, 0},
      {{{64, 128, 2}}, 64, 2},
      {{{128, 192, 2}}, 96, 4},
      {{{192, 256, 2}}, 128, 3},
  };
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const std::string prefix = "stages." + std::to_string(s) + ".";
    std::size_t b = 0;
    for (const auto& cfg : stages[s].bottlenecks) m.add(prefix + std::to_string(b++), layers::bottleneck(cfg, rng));
    if (stages[s].depth > 0) {
      MobileViTV2BlockCfg cfg;
      cfg.channels = stages[s].bottlenecks.back().out_ch;
      cfg.attn_dim = stages[s].attn_dim;
      cfg.depth = stages[s].depth;
      m.add(prefix + std::to_string(b), layers::mobilevitv2(cfg, rng));
    }
  }
  m.add("head.global_pool", layers::global_avg_pool());
  m.mark_head();
  m.add("head.drop", layers::dropout(kHeadDropout));
  m.add("head.fc", layers::dense(256, num_classes, rng));
  return m;
}

ModelGraph build_baseline_cnn(std::size_t num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("baseline_cnn: num_classes must be >= 2");
  ModelGraph m(Architecture::baseline_cnn, num_classes, kBaselineInput, seed);
  CounterRng rng(seed);

  const std::size_t widths[] = {32, 64, 128, 256, 256};
  std::size_t in = 3;
  for (std::size_t i = 0; i < 5; ++i) {
    const std::string p = "features." + std::to_string(i) + ".";
    m.add(p + "conv", layers::conv2d(in, widths[i], 3, {1, 1, 1}, true, rng));
    m.add(p + "relu", layers::relu());
    m.add(p + "pool", layers::max_pool(2, 2));
    if (i < 4) m.add(p + "bn", layers::batch_norm(widths[i]));
    if (i == 1 || i == 3) m.add(p + "drop", layers::dropout(0.25));
    in = widths[i];
  }
  m.add("features.flatten", layers::flatten());
  m.mark_head();
  const std::size_t flat = 256 * (kBaselineInput / 32) * (kBaselineInput / 32);
  m.add("classifier.fc1", layers::dense(flat, 840, rng));
  m.add("classifier.relu", layers::relu());
  m.add("classifier.drop", layers::dropout(0.5));
  m.add("classifier.fc2", layers::dense(840, num_classes, rng));
  return m;
}

ModelGraph build_model(Architecture arch, std::size_t num_classes, std::uint64_t seed) {
  switch (arch) {
    case Architecture::mobilevitv2_050: return build_mobilevitv2_050(num_classes, seed);
    case Architecture::baseline_cnn: return build_baseline_cnn(num_classes, seed);
    case Architecture::custom: break;
  }
  throw ConfigError("build_model: no builder for a custom architecture");
}

// ---- analysis -----------------------------------------------------------------------

std::size_t count_params(const ModelGraph& model) {
  std::size_t total = 0;
  for (const auto& p : model.named_tensors()) {
    if (p.role == TensorRole::parameter) total += p.tensor.numel();
  }
  return total;
}

std::size_t estimate_model_size_bytes(const ModelGraph& model) { return 4 * count_params(model); }

std::uint64_t count_macs(const ModelGraph& model, const Shape& input_shape) {
  NoGradGuard no_grad;
  OpCounter counter;
  {
    CountingScope scope(counter);
    (void)model.forward_range(Tensor::zeros(input_shape), 0, model.size(), Mode::eval);
  }
  return counter.macs;
}

Tensor predict(const ModelGraph& model, const Tensor& batch) {
  if (model.mode() != Mode::eval) throw ContractError("predict: model must be in eval mode");
  const std::size_t side = model.input_size();
  if (batch.rank() != 4 || batch.dim(1) != 3 || (side != 0 && (batch.dim(2) != side || batch.dim(3) != side))) {
    const std::string want = side ? std::to_string(side) + "x" + std::to_string(side) : std::string("HxW");
    throw DimensionError("predict: expected input [B, 3, " + (side ? std::to_string(side) : std::string("H")) + ", " +
                         (side ? std::to_string(side) : std::string("W")) + "], got " + batch.shape().str() +
                         "; resize images to " + want + " before inference");
  }
  NoGradGuard no_grad;
  Tensor logits = model.forward(batch);
  return softmax(logits, 1);
}

std::string head_bias_name(Architecture arch) {
  switch (arch) {
    case Architecture::mobilevitv2_050: return "head.fc.bias";
    case Architecture::baseline_cnn: return "classifier.fc2.bias";
    case Architecture::custom: break;
  }
  return {};
}

ArchitectureGuess detect_architecture(const std::vector<std::pair<std::string, Shape>>& tensors) {
  auto starts = [](const std::string& s, const char* p) { return s.rfind(p, 0) == 0; };
  Architecture arch = Architecture::custom;
  for (const auto& [name, shape] : tensors) {
    if (starts(name, "stem.")) arch = Architecture::mobilevitv2_050;
    else if (starts(name, "features.")) arch = Architecture::baseline_cnn;
    if (arch != Architecture::custom) break;
  }
  if (arch == Architecture::custom) {
    throw FormatError("unrecognised weight layout: expected 'stem.*' (mobilevitv2_050) or 'features.*' (baseline_cnn)");
  }
  const std::string bias = head_bias_name(arch);
  for (const auto& [name, shape] : tensors) {
    if (name == bias) {
      if (shape.rank() != 1 || shape[0] < 2) throw FormatError("head tensor '" + bias + "' has shape " + shape.str());
      return {arch, shape[0]};
    }
  }
  throw FormatError("weight archive lacks head tensor '" + bias + "'");
}

}  // namespace leafvit
