#include "leafvit/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "leafvit/error.hpp"
#include "leafvit/op_counter.hpp"
#include "leafvit/parallel.hpp"
#include "leafvit/trainer.hpp"

namespace leafvit {

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < classes_; ++i) t += at(i, i);
  return t;
}

std::uint64_t ConfusionMatrix::support(std::size_t cls) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < classes_; ++j) s += at(cls, j);
  return s;
}

std::uint64_t ConfusionMatrix::predicted(std::size_t cls) const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < classes_; ++i) s += at(i, cls);
  return s;
}

std::size_t argmax_row(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

namespace {

void check_predictions(const Tensor& probs, std::span<const std::size_t> truth) {
  if (!probs.defined() || probs.rank() != 2) {
    throw DimensionError("metrics: expected [N, C] probabilities");
  }
  if (truth.size() != probs.dim(0)) {
    throw DimensionError("metrics: " + std::to_string(truth.size()) + " labels for " + std::to_string(probs.dim(0)) +
                         " predictions");
  }
  for (std::size_t t : truth) {
    if (t >= probs.dim(1)) throw LabelError("metrics: true class " + std::to_string(t) + " out of range");
  }
}

void check_class(const ConfusionMatrix& cm, std::size_t cls) {
  if (cm.total() == 0) throw ContractError("metrics: empty confusion matrix");
  if (cls >= cm.classes()) throw ContractError("metrics: class " + std::to_string(cls) + " out of range");
}

Rate ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return {0.0, true};
  return {static_cast<double>(num) / static_cast<double>(den), false};
}

}  // namespace

ConfusionMatrix confusion(const Tensor& probs, std::span<const std::size_t> truth) {
  check_predictions(probs, truth);
  const std::size_t c = probs.dim(1);
  ConfusionMatrix cm(c);
  const auto p = probs.data();
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], argmax_row(p.subspan(i * c, c)));
  return cm;
}

double accuracy(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ContractError("accuracy: empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
}

Rate precision(const ConfusionMatrix& cm, std::size_t cls) {
  check_class(cm, cls);
  return ratio(cm.at(cls, cls), cm.predicted(cls));
}

Rate recall(const ConfusionMatrix& cm, std::size_t cls) {
  check_class(cm, cls);
  return ratio(cm.at(cls, cls), cm.support(cls));
}

double f1_score(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

Rate f1(const ConfusionMatrix& cm, std::size_t cls) {
  const Rate p = precision(cm, cls);
  const Rate r = recall(cm, cls);
  return {f1_score(p.value, r.value), p.undefined || r.undefined};
}

double ovr_accuracy(const ConfusionMatrix& cm, std::size_t cls) {
  check_class(cm, cls);
  const std::uint64_t total = cm.total();
  const std::uint64_t tp = cm.at(cls, cls);
  const std::uint64_t fp = cm.predicted(cls) - tp;
  const std::uint64_t fn = cm.support(cls) - tp;
  return static_cast<double>(total - fp - fn) / static_cast<double>(total);
}

double top_k(const Tensor& probs, std::span<const std::size_t> truth, std::size_t k) {
  check_predictions(probs, truth);
  if (k == 0) throw ContractError("top_k: k must be >= 1");
  if (truth.empty()) throw ContractError("top_k: no predictions");
  const std::size_t c = probs.dim(1);
  k = std::min(k, c);
  const auto p = probs.data();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const float* row = p.data() + i * c;
    const float s = row[truth[i]];
    // rank of the true class: higher scores, or equal scores at lower ids, go first
    std::size_t ahead = 0;
    for (std::size_t j = 0; j < c; ++j) ahead += row[j] > s || (row[j] == s && j < truth[i]);
    hits += ahead < k;
  }
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

RocCurve roc_curve(std::span<const double> scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw DimensionError("roc_curve: scores and labels differ in length");
  const auto n_pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  const std::size_t n_neg = positive.size() - n_pos;
  RocCurve roc;
  if (n_pos == 0 || n_neg == 0) {
    roc.points = {{0.0, 0.0}, {1.0, 1.0}};
    return roc;
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  roc.points.push_back({0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double thr = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == thr; ++i) {
      if (positive[order[i]]) ++tp;
      else ++fp;
    }
    roc.points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                          static_cast<double>(tp) / static_cast<double>(n_pos)});
  }
  double area = 0;
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    const auto [x0, y0] = roc.points[i - 1];
    const auto [x1, y1] = roc.points[i];
    area += (x1 - x0) * (y0 + y1) / 2.0;
  }
  roc.auc = area;
  return roc;
}

RocCurve roc_curve(const Tensor& probs, std::span<const std::size_t> truth, std::size_t cls) {
  check_predictions(probs, truth);
  const std::size_t c = probs.dim(1);
  if (cls >= c) throw ContractError("roc_curve: class " + std::to_string(cls) + " out of range");
  std::vector<double> scores(truth.size());
  std::vector<bool> pos(truth.size());
  const auto p = probs.data();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    scores[i] = p[i * c + cls];
    pos[i] = truth[i] == cls;
  }
  return roc_curve(scores, pos);
}

EvaluationReport make_report(const Tensor& probs, std::span<const std::size_t> truth,
                             const std::vector<std::string>& labels, const std::string& split) {
  check_predictions(probs, truth);
  if (truth.empty()) throw ContractError("evaluate: no samples");
  const std::size_t c = probs.dim(1);
  if (labels.size() != c) {
    throw LabelError("evaluate: " + std::to_string(labels.size()) + " labels for a " + std::to_string(c) +
                     "-class model");
  }
  EvaluationReport r;
  r.split = split;
  r.labels = labels;
  r.samples = truth.size();
  r.confusion = confusion(probs, truth);
  r.accuracy = accuracy(r.confusion);
  r.top1 = top_k(probs, truth, 1);
  r.top5 = top_k(probs, truth, 5);
  r.loss = cross_entropy_probs(probs, truth);
  for (std::size_t k = 0; k < c; ++k) {
    ClassReport cr;
    cr.label = labels[k];
    cr.precision = precision(r.confusion, k);
    cr.recall = recall(r.confusion, k);
    cr.f1 = f1(r.confusion, k);
    cr.ovr_accuracy = ovr_accuracy(r.confusion, k);
    cr.support = r.confusion.support(k);
    RocCurve roc = roc_curve(probs, truth, k);
    cr.auc = roc.auc;
    r.roc.push_back(std::move(roc));
    r.macro_precision += cr.precision.value;
    r.macro_recall += cr.recall.value;
    r.macro_f1 += cr.f1.value;
    r.classes.push_back(std::move(cr));
  }
  r.macro_precision /= static_cast<double>(c);
  r.macro_recall /= static_cast<double>(c);
  r.macro_f1 /= static_cast<double>(c);
  return r;
}

EvaluationReport evaluate(const Predictor& predictor, const DatasetIndex& index, Split split, std::size_t image_size,
                          std::size_t batch_size) {
  BatchStream stream(index, split, batch_size, index.seed, 0, image_size);
  std::vector<float> probs;
  std::vector<std::size_t> truth;
  std::size_t width = 0;
  while (auto batch = stream.next()) {
    Tensor p = predictor(batch->pixels);
    if (p.rank() != 2 || p.dim(0) != batch->class_ids.size()) {
      throw DimensionError("evaluate: predictor returned " + p.shape().str() + " for a batch of " +
                           std::to_string(batch->class_ids.size()));
    }
    width = p.dim(1);
    probs.insert(probs.end(), p.data().begin(), p.data().end());
    truth.insert(truth.end(), batch->class_ids.begin(), batch->class_ids.end());
  }
  return make_report(Tensor(Shape{truth.size(), width}, std::move(probs)), truth, index.labels, to_string(split));
}

EvaluationReport evaluate(const ModelGraph& model, const DatasetIndex& index, Split split, std::size_t batch_size) {
  const std::size_t size = model.input_size() ? model.input_size() : kMobileVitInput;
  return evaluate([&](const Tensor& x) { return predict(model, x); }, index, split, size, batch_size);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double rank = std::ceil(std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size()));
  const std::size_t idx = rank < 1.0 ? 0 : static_cast<std::size_t>(rank) - 1;
  return values[std::min(idx, values.size() - 1)];
}

BenchReport bench(const ModelGraph& model, std::size_t iters, std::size_t warmup, std::uint64_t seed) {
  if (iters == 0) throw ConfigError("bench: iters must be >= 1");
  const std::size_t side = model.input_size() ? model.input_size() : kMobileVitInput;
  const Shape shape{1, 3, side, side};

  BenchReport r;
  r.model = to_string(model.architecture());
  r.params = count_params(model);
  r.macs = count_macs(model, shape);
  r.gmacs = static_cast<double>(r.macs) / 1e9;
  r.iters = iters;
  r.warmup = warmup;
  r.threads = worker_threads();
  r.seed = seed;

  CounterRng rng(seed, 0xbe7c);
  std::vector<float> data(shape.numel());
  for (auto& v : data) v = static_cast<float>(rng.normal());
  const Tensor x(shape, std::move(data));

  NoGradGuard no_grad;
  for (std::size_t i = 0; i < warmup; ++i) (void)model.forward_range(x, 0, model.size(), Mode::eval);
  std::vector<double> lat;
  lat.reserve(iters);
  double total = 0;
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)model.forward_range(x, 0, model.size(), Mode::eval);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    lat.push_back(s * 1e3);
    total += s;
  }
  // guard against a zero reading from a coarse clock
  total = std::max(total, 1e-9);
  r.fps = static_cast<double>(iters) / total;
  r.latency_p50_ms = percentile(lat, 50);
  r.latency_p95_ms = percentile(lat, 95);
  return r;
}

}  // namespace leafvit
