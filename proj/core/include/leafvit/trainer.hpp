#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "leafvit/blocks.hpp"
#include "leafvit/data.hpp"
#include "leafvit/model.hpp"
#include "leafvit/tensor.hpp"
#include "leafvit/weights_io.hpp"

namespace leafvit {

inline constexpr double kProbFloor = 1e-12;

/// Mean over the batch of −log softmax(logits)[target]. Differentiable.
template <class T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::size_t> targets);

/// Same loss from probabilities, each clamped below at 1e-12. Value only.
double cross_entropy_probs(const Tensor& probs, std::span<const std::size_t> targets);

// ---- Adam -------------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<double> m, v;
};

/// One bias-corrected Adam update for step t (1-based) on raw buffers.
void adam_update(std::span<float> weights, std::span<const float> grads, AdamMoments& state, std::uint64_t t,
                 double lr, const AdamConfig& cfg = {});

class Adam {
 public:
  explicit Adam(ParamList<float> params, AdamConfig cfg = {});

  /// Applies one update from the accumulated gradients (missing gradients
  /// count as zero). Every gradient is checked before any weight changes; a
  /// non-finite entry throws NumericError naming the tensor.
  void step(double lr);
  void zero_grad();
  [[nodiscard]] std::uint64_t steps() const { return t_; }
  [[nodiscard]] const AdamMoments& moments(std::size_t i) const { return state_.at(i); }

 private:
  ParamList<float> params_;
  std::vector<AdamMoments> state_;
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
};

// ---- schedules --------------------------------------------------------------------

struct PlateauConfig {
  double factor = 0.1;
  std::size_t patience = 2;
  double min_lr = 1e-6;
  double min_delta = 0.0;
};

/// An epoch improves when val_loss < best − min_delta. After `patience`
/// epochs in a row without improvement the rate drops by `factor` (floored
/// at min_lr) and the count restarts.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, PlateauConfig cfg);
  double step(double val_loss);
  [[nodiscard]] double lr() const { return lr_; }

 private:
  PlateauConfig cfg_;
  double lr_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
};

struct EarlyStopConfig {
  std::size_t patience = 5;
  double min_delta = 0.0;
};

class EarlyStopping {
 public:
  explicit EarlyStopping(EarlyStopConfig cfg) : cfg_(cfg) {}
  /// Records one epoch; true once `patience` epochs passed without improvement.
  bool step(double val_loss);
  [[nodiscard]] std::size_t bad_epochs() const { return bad_; }

 private:
  EarlyStopConfig cfg_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
};

// ---- training loop ------------------------------------------------------------------

enum class FineTune {
  head_only,  ///< backbone frozen in eval mode; its features are computed once
  full,       ///< every weight trains and batch-norm statistics update
};

std::string to_string(FineTune mode);
FineTune parse_fine_tune(const std::string& text);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0, val_loss = 0, val_acc = 0, lr = 0, seconds = 0;
};

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 20;
  PlateauConfig scheduler;
  EarlyStopConfig early_stop;
  AdamConfig adam;
  std::uint64_t seed = 0;
  FineTune mode = FineTune::head_only;
  bool record_time = true;  ///< false writes 0 seconds so logs are byte-stable
  std::function<void(const EpochLog&)> on_epoch;

  /// Throws ConfigError on out-of-range values. lr = 0 is accepted.
  void validate() const;
};

struct TrainResult {
  WeightArchive best;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
  bool stopped_early = false;
};

/// Runs the epoch loop and leaves `model` holding the best weights.
TrainResult train(ModelGraph& model, const DatasetIndex& index, const TrainConfig& cfg);

void write_train_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);
std::string format_train_log(const std::vector<EpochLog>& log);

}  // namespace leafvit
