#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "leafvit/data.hpp"
#include "leafvit/model.hpp"
#include "leafvit/tensor.hpp"

namespace leafvit {

/// C×C counts, rows = true class, columns = predicted class.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

  [[nodiscard]] std::size_t classes() const { return classes_; }
  [[nodiscard]] std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_.at(truth * classes_ + pred); }
  void add(std::size_t truth, std::size_t pred, std::uint64_t n = 1) { counts_.at(truth * classes_ + pred) += n; }
  [[nodiscard]] std::uint64_t total() const;
  [[nodiscard]] std::uint64_t trace() const;
  [[nodiscard]] std::uint64_t support(std::size_t cls) const;    ///< row sum
  [[nodiscard]] std::uint64_t predicted(std::size_t cls) const;  ///< column sum

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t classes_ = 0;
  std::vector<std::uint64_t> counts_;
};

/// Index of the row maximum; ties go to the lowest class id.
std::size_t argmax_row(std::span<const float> row);

/// probs [N,C] against true ids.
ConfusionMatrix confusion(const Tensor& probs, std::span<const std::size_t> truth);

/// A rate whose denominator may be zero; then value is 0 and `undefined` set.
struct Rate {
  double value = 0;
  bool undefined = false;
};

/// trace / total. Throws ContractError on an empty matrix.
double accuracy(const ConfusionMatrix& cm);
Rate precision(const ConfusionMatrix& cm, std::size_t cls);
Rate recall(const ConfusionMatrix& cm, std::size_t cls);
Rate f1(const ConfusionMatrix& cm, std::size_t cls);
/// Harmonic mean 2PR/(P+R); 0 when P + R == 0.
double f1_score(double precision, double recall);
/// (TP + TN) / total treating `cls` as the positive class.
double ovr_accuracy(const ConfusionMatrix& cm, std::size_t cls);

/// Fraction of rows whose true class is among the k highest scores (k is
/// clamped to C). Equal scores rank the lower class id first.
double top_k(const Tensor& probs, std::span<const std::size_t> truth, std::size_t k);

struct RocCurve {
  std::vector<std::pair<double, double>> points;  ///< (fpr, tpr), from (0,0) to (1,1)
  std::optional<double> auc;                      ///< empty when the class has no positives or no negatives
};

/// One-vs-rest ROC of column `cls`; thresholds are the distinct scores.
RocCurve roc_curve(const Tensor& probs, std::span<const std::size_t> truth, std::size_t cls);
/// Same on a raw score vector and binary labels.
RocCurve roc_curve(std::span<const double> scores, const std::vector<bool>& positive);

struct ClassReport {
  std::string label;
  Rate precision, recall, f1;
  double ovr_accuracy = 0;
  std::uint64_t support = 0;
  std::optional<double> auc;
};

struct EvaluationReport {
  std::string split;
  std::vector<std::string> labels;
  std::size_t samples = 0;
  double accuracy = 0, top1 = 0, top5 = 0, loss = 0;
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  std::vector<ClassReport> classes;
  ConfusionMatrix confusion;
  std::vector<RocCurve> roc;
};

/// Every metric over one set of predictions.
EvaluationReport make_report(const Tensor& probs, std::span<const std::size_t> truth,
                             const std::vector<std::string>& labels, const std::string& split = "val");

/// Maps a normalized image batch [B,3,S,S] to probabilities [B,C].
using Predictor = std::function<Tensor(const Tensor& batch)>;

EvaluationReport evaluate(const Predictor& predictor, const DatasetIndex& index, Split split,
                          std::size_t image_size = 224, std::size_t batch_size = 32);
/// Uses predict(model, ·); the model must be in eval mode.
EvaluationReport evaluate(const ModelGraph& model, const DatasetIndex& index, Split split,
                          std::size_t batch_size = 32);

struct BenchReport {
  std::string model;
  std::size_t params = 0;
  std::uint64_t macs = 0;
  double gmacs = 0;
  double fps = 0;
  double latency_p50_ms = 0, latency_p95_ms = 0;
  std::size_t iters = 0, warmup = 0, threads = 0;
  std::uint64_t seed = 0;
};

/// Warmup then `iters` timed single-image eval forwards on a fixed random input.
BenchReport bench(const ModelGraph& model, std::size_t iters, std::size_t warmup, std::uint64_t seed = 0);

/// Nearest-rank percentile of a sample, q in [0, 100].
double percentile(std::vector<double> values, double q);

// ---- serialization ----------------------------------------------------------------------

std::string report_to_json(const EvaluationReport& report);
std::string bench_to_json(const BenchReport& report);
/// Header row of labels, then one row per true class.
std::string confusion_to_csv(const EvaluationReport& report);
/// class,label,fpr,tpr rows for every class.
std::string roc_to_csv(const EvaluationReport& report);
/// Aligned per-class table with a macro "Total" row.
std::string format_report_table(const EvaluationReport& report);

}  // namespace leafvit
