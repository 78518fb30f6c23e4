#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "leafvit/blocks.hpp"
#include "leafvit/ops.hpp"
#include "leafvit/rng.hpp"
#include "leafvit/tensor.hpp"

namespace leafvit {

enum class Architecture { mobilevitv2_050, baseline_cnn, custom };

std::string to_string(Architecture arch);

/// One stage of a ModelGraph. Layers own their weights; `collect` exposes
/// them under `prefix`.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Mode mode, CounterRng& rng) const = 0;
  virtual void collect(const std::string& prefix, ParamList<float>& out) const;
  [[nodiscard]] virtual std::string kind() const = 0;
};

namespace layers {

std::unique_ptr<Layer> dense(std::size_t in, std::size_t out, CounterRng& rng);
std::unique_ptr<Layer> conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Conv2dParams params,
                              bool bias, CounterRng& rng);
std::unique_ptr<Layer> conv_bn_act(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Conv2dParams params,
                                   bool activate, CounterRng& rng);
std::unique_ptr<Layer> batch_norm(std::size_t channels);
std::unique_ptr<Layer> relu();
std::unique_ptr<Layer> silu();
std::unique_ptr<Layer> max_pool(std::size_t kernel, std::size_t stride);
/// Adaptive average pool to 1×1 followed by flatten: [B,C,H,W] -> [B,C].
std::unique_ptr<Layer> global_avg_pool();
std::unique_ptr<Layer> flatten();
std::unique_ptr<Layer> dropout(double p);
std::unique_ptr<Layer> bottleneck(const BottleneckBlockCfg& cfg, CounterRng& rng);
std::unique_ptr<Layer> mobilevitv2(const MobileViTV2BlockCfg& cfg, CounterRng& rng);

}  // namespace layers

struct LayerTrace {
  std::string name;
  Shape shape;
};

/// Ordered, named layer stack. Layers [0, feature_end) form the backbone;
/// the rest is the classification head. Move-only: weights are owned.
class ModelGraph {
 public:
  ModelGraph() = default;
  ModelGraph(Architecture arch, std::size_t num_classes, std::size_t input_size, std::uint64_t seed);

  ModelGraph(ModelGraph&&) noexcept = default;
  ModelGraph& operator=(ModelGraph&&) noexcept = default;

  void add(std::string name, std::unique_ptr<Layer> layer);
  /// Everything added after this call belongs to the head.
  void mark_head() { feature_end_ = layers_.size(); }

  [[nodiscard]] std::size_t size() const { return layers_.size(); }
  [[nodiscard]] const std::string& layer_name(std::size_t i) const { return names_.at(i); }
  [[nodiscard]] std::size_t feature_end() const { return feature_end_; }
  [[nodiscard]] Architecture architecture() const { return arch_; }
  [[nodiscard]] std::size_t num_classes() const { return num_classes_; }
  /// Square input side expected by predict(); 0 means unchecked.
  [[nodiscard]] std::size_t input_size() const { return input_size_; }

  [[nodiscard]] Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }

  /// Full forward in the current mode.
  Tensor forward(const Tensor& x) const { return forward_range(x, 0, size(), mode_); }
  Tensor forward_range(const Tensor& x, std::size_t begin, std::size_t end, Mode mode) const;
  Tensor forward_features(const Tensor& x, Mode mode) const { return forward_range(x, 0, feature_end_, mode); }
  Tensor forward_head(const Tensor& features, Mode mode) const {
    return forward_range(features, feature_end_, size(), mode);
  }

  /// All weights and buffers, in layer order, with unique dotted names.
  [[nodiscard]] ParamList<float> named_tensors() const;
  [[nodiscard]] ParamList<float> named_tensors(std::size_t begin, std::size_t end) const;

  /// Output shape after every layer for an eval-mode pass on zeros.
  [[nodiscard]] std::vector<LayerTrace> trace(const Shape& input) const;

  /// Restarts the dropout stream.
  void reseed(std::uint64_t seed) { rng_ = CounterRng(seed, kDropoutStream); }

 private:
  static constexpr std::uint64_t kDropoutStream = 0xd5;

  Architecture arch_ = Architecture::custom;
  std::size_t num_classes_ = 0;
  std::size_t input_size_ = 0;
  Mode mode_ = Mode::eval;
  std::size_t feature_end_ = 0;
  std::vector<std::string> names_;
  std::vector<std::unique_ptr<Layer>> layers_;
  mutable CounterRng rng_{0, kDropoutStream};
};

inline constexpr std::size_t kMobileVitInput = 224;
inline constexpr std::size_t kBaselineInput = 256;
inline constexpr double kHeadDropout = 0.1;

/// Stem, five stages, pooled dense head (see README for the stage table).
ModelGraph build_mobilevitv2_050(std::size_t num_classes, std::uint64_t seed = 0);
/// Five conv/ReLU/max-pool stages and a two-layer dense classifier on 256×256 input.
ModelGraph build_baseline_cnn(std::size_t num_classes, std::uint64_t seed = 0);
ModelGraph build_model(Architecture arch, std::size_t num_classes, std::uint64_t seed = 0);

/// Trainable parameters only; batch-norm running statistics are excluded.
std::size_t count_params(const ModelGraph& model);
std::size_t estimate_model_size_bytes(const ModelGraph& model);
/// MACs of one eval-mode forward on zeros of `input_shape`.
std::uint64_t count_macs(const ModelGraph& model, const Shape& input_shape);

/// Softmax probabilities [B, num_classes]. Requires eval mode; rejects
/// inputs whose spatial size differs from the model's input size.
Tensor predict(const ModelGraph& model, const Tensor& batch);

/// Architecture implied by a set of tensor names, and the class count
/// implied by its head bias; throws FormatError when neither layout matches.
struct ArchitectureGuess {
  Architecture arch;
  std::size_t num_classes;
};
ArchitectureGuess detect_architecture(const std::vector<std::pair<std::string, Shape>>& tensors);

/// Name of the final dense bias for each built-in architecture.
std::string head_bias_name(Architecture arch);

}  // namespace leafvit
