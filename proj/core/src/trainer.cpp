#include "leafvit/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>

#include "leafvit/error.hpp"

namespace leafvit {

// ---- losses ---------------------------------------------------------------------------

namespace {

void check_targets(std::size_t batch, std::size_t classes, std::span<const std::size_t> targets, const char* who) {
  if (classes < 2) throw DimensionError(std::string(who) + ": need at least 2 classes");
  if (targets.size() != batch) {
    throw DimensionError(std::string(who) + ": " + std::to_string(targets.size()) + " targets for a batch of " +
                         std::to_string(batch));
  }
  for (std::size_t i = 0; i < batch; ++i) {
    if (targets[i] >= classes) {
      throw LabelError(std::string(who) + ": target " + std::to_string(targets[i]) + " at row " + std::to_string(i) +
                       " is out of range for " + std::to_string(classes) + " classes");
    }
  }
}

}  // namespace

template <class T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::size_t> targets) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: expected [B, C] logits, got " + logits.shape().str());
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  check_targets(b, c, targets, "cross_entropy");

  const auto v = logits.data();
  std::vector<T> probs(b * c);
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = v.data() + i * c;
    const T peak = *std::max_element(row, row + c);
    double z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - peak));
    const double log_z = std::log(z) + static_cast<double>(peak);
    total += log_z - static_cast<double>(row[targets[i]]);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - log_z));
  }
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return detail::make_result<T>(
      Shape{}, {static_cast<T>(total / static_cast<double>(b))}, {&logits}, "cross_entropy",
      [logits, probs = std::move(probs), tg = std::move(tg), b, c](const detail::TensorImpl<T>& o) {
        T* g = detail::grad_target(logits);
        const T scale = o.grad[0] / static_cast<T>(b);
        for (std::size_t i = 0; i < b; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            g[i * c + j] += scale * (probs[i * c + j] - (j == tg[i] ? T(1) : T(0)));
          }
        }
      });
}

double cross_entropy_probs(const Tensor& probs, std::span<const std::size_t> targets) {
  if (probs.rank() != 2) throw DimensionError("cross_entropy: expected [B, C] probabilities, got " + probs.shape().str());
  const std::size_t b = probs.dim(0), c = probs.dim(1);
  check_targets(b, c, targets, "cross_entropy");
  const auto p = probs.data();
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    total -= std::log(std::max(static_cast<double>(p[i * c + targets[i]]), kProbFloor));
  }
  return total / static_cast<double>(b);
}

template BasicTensor<float> cross_entropy(const BasicTensor<float>&, std::span<const std::size_t>);
template BasicTensor<double> cross_entropy(const BasicTensor<double>&, std::span<const std::size_t>);

// ---- Adam -----------------------------------------------------------------------------

void adam_update(std::span<float> weights, std::span<const float> grads, AdamMoments& state, std::uint64_t t,
                 double lr, const AdamConfig& cfg) {
  const std::size_t n = weights.size();
  if (t == 0) throw ContractError("adam: step counter starts at 1");
  if (!grads.empty() && grads.size() != n) throw DimensionError("adam: gradient size does not match weights");
  if (state.m.size() != n) state.m.assign(n, 0.0);
  if (state.v.size() != n) state.v.assign(n, 0.0);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads.empty() ? 0.0 : static_cast<double>(grads[i]);
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    weights[i] = static_cast<float>(static_cast<double>(weights[i]) - lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
  }
}

Adam::Adam(ParamList<float> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  params_.erase(std::remove_if(params_.begin(), params_.end(),
                               [](const NamedParam<float>& p) { return p.role != TensorRole::parameter; }),
                params_.end());
  state_.resize(params_.size());
}

void Adam::step(double lr) {
  for (const auto& p : params_) {
    for (float g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in weight '" + p.name + "'");
    }
  }
  ++t_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    adam_update(p.tensor.mutable_data(), p.tensor.grad(), state_[i], t_, lr, cfg_);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

// ---- schedules --------------------------------------------------------------------------

PlateauScheduler::PlateauScheduler(double lr, PlateauConfig cfg) : cfg_(cfg), lr_(lr) {
  if (!(cfg.factor > 0.0 && cfg.factor < 1.0)) throw ConfigError("scheduler factor must lie in (0, 1)");
  if (cfg.patience == 0) throw ConfigError("scheduler patience must be >= 1");
  if (cfg.min_lr < 0.0) throw ConfigError("scheduler min_lr must be >= 0");
}

double PlateauScheduler::step(double val_loss) {
  if (val_loss < best_ - cfg_.min_delta) {
    best_ = val_loss;
    bad_ = 0;
  } else if (++bad_ >= cfg_.patience) {
    lr_ = std::max(lr_ * cfg_.factor, std::min(cfg_.min_lr, lr_));
    bad_ = 0;
  }
  return lr_;
}

bool EarlyStopping::step(double val_loss) {
  if (val_loss < best_ - cfg_.min_delta) {
    best_ = val_loss;
    bad_ = 0;
    return false;
  }
  return ++bad_ >= cfg_.patience;
}

// ---- training loop --------------------------------------------------------------------

std::string to_string(FineTune mode) { return mode == FineTune::head_only ? "head" : "full"; }

FineTune parse_fine_tune(const std::string& text) {
  if (text == "head") return FineTune::head_only;
  if (text == "full") return FineTune::full;
  throw ConfigError("unknown fine-tune mode '" + text + "' (expected head or full)");
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and >= 0");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (max_epochs < 1 || max_epochs > 1000) throw ConfigError("max epochs must lie in [1, 1000]");
  if (!(scheduler.factor > 0.0 && scheduler.factor < 1.0)) throw ConfigError("scheduler factor must lie in (0, 1)");
  if (scheduler.patience == 0 || early_stop.patience == 0) throw ConfigError("patience values must be >= 1");
}

namespace {

struct FeatureCache {
  std::size_t width = 0;
  std::unordered_map<std::size_t, std::size_t> row_of;  // record position -> row
  std::vector<float> rows;
};

FeatureCache backbone_features(const ModelGraph& model, const DatasetIndex& index, std::size_t batch_size) {
  NoGradGuard no_grad;
  FeatureCache cache;
  for (Split split : {Split::train, Split::val}) {
    BatchStream stream(index, split, batch_size, index.seed, 0, model.input_size());
    while (auto batch = stream.next()) {
      Tensor f = model.forward_features(batch->pixels, Mode::eval);
      if (f.rank() != 2) throw DimensionError("backbone features must be [B, F], got " + f.shape().str());
      cache.width = f.dim(1);
      for (std::size_t i = 0; i < batch->records.size(); ++i) {
        cache.row_of[batch->records[i]] = cache.rows.size() / cache.width;
        cache.rows.insert(cache.rows.end(), f.data().begin() + static_cast<std::ptrdiff_t>(i * cache.width),
                          f.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * cache.width));
      }
    }
  }
  return cache;
}

Tensor gather(const FeatureCache& cache, std::span<const std::size_t> records) {
  std::vector<float> out;
  out.reserve(records.size() * cache.width);
  for (std::size_t r : records) {
    const std::size_t row = cache.row_of.at(r);
    out.insert(out.end(), cache.rows.begin() + static_cast<std::ptrdiff_t>(row * cache.width),
               cache.rows.begin() + static_cast<std::ptrdiff_t>((row + 1) * cache.width));
  }
  return Tensor(Shape{records.size(), cache.width}, std::move(out));
}

std::vector<std::size_t> targets_of(const DatasetIndex& index, std::span<const std::size_t> records) {
  std::vector<std::size_t> t;
  for (std::size_t r : records) t.push_back(index.records[r].class_id);
  return t;
}

struct ValResult {
  double loss = 0, acc = 0;
};

}  // namespace

TrainResult train(ModelGraph& model, const DatasetIndex& index, const TrainConfig& cfg) {
  cfg.validate();
  if (index.labels.size() != model.num_classes()) {
    throw LabelError("dataset has " + std::to_string(index.labels.size()) + " classes but the model head has " +
                     std::to_string(model.num_classes()));
  }
  if (index.count(Split::train) == 0 || index.count(Split::val) == 0) {
    throw IngestionError("training needs non-empty train and val splits");
  }
  const bool head_only = cfg.mode == FineTune::head_only;
  model.reseed(cfg.seed);

  FeatureCache cache;
  if (head_only) cache = backbone_features(model, index, cfg.batch_size);

  const ParamList<float> trainable =
      head_only ? model.named_tensors(model.feature_end(), model.size()) : model.named_tensors();
  Adam opt(trainable, cfg.adam);
  opt.zero_grad();
  PlateauScheduler sched(cfg.lr, cfg.scheduler);
  EarlyStopping stopper(cfg.early_stop);

  auto run_val = [&]() {
    NoGradGuard no_grad;
    double loss = 0;
    std::size_t correct = 0, n = 0;
    auto score = [&](const Tensor& logits, const std::vector<std::size_t>& tg) {
      loss += cross_entropy(logits, tg).item() * static_cast<double>(tg.size());
      const auto v = logits.data();
      const std::size_t c = logits.dim(1);
      for (std::size_t i = 0; i < tg.size(); ++i) {
        const auto row = v.subspan(i * c, c);
        correct += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == tg[i];
      }
      n += tg.size();
    };
    if (head_only) {
      const auto order = split_order(index, Split::val, cfg.seed, 0);
      for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
        const std::span<const std::size_t> recs(order.data() + s, std::min(cfg.batch_size, order.size() - s));
        score(model.forward_head(gather(cache, recs), Mode::eval), targets_of(index, recs));
      }
    } else {
      BatchStream stream(index, Split::val, cfg.batch_size, cfg.seed, 0, model.input_size());
      while (auto batch = stream.next()) score(model.forward_range(batch->pixels, 0, model.size(), Mode::eval), batch->class_ids);
    }
    return ValResult{loss / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
  };

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = sched.lr();
    double loss_sum = 0;
    std::size_t seen = 0, batch_no = 0;

    auto step = [&](const Tensor& logits, const std::vector<std::size_t>& tg) {
      ++batch_no;
      Tensor loss = cross_entropy(logits, tg);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no));
      }
      backward(loss);
      try {
        opt.step(lr);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no));
      }
      opt.zero_grad();
      loss_sum += value * static_cast<double>(tg.size());
      seen += tg.size();
    };

    if (head_only) {
      const auto order = split_order(index, Split::train, cfg.seed, epoch);
      for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
        const std::span<const std::size_t> recs(order.data() + s, std::min(cfg.batch_size, order.size() - s));
        step(model.forward_head(gather(cache, recs), Mode::train), targets_of(index, recs));
      }
    } else {
      BatchStream stream(index, Split::train, cfg.batch_size, cfg.seed, epoch, model.input_size());
      while (auto batch = stream.next()) {
        step(model.forward_range(batch->pixels, 0, model.size(), Mode::train), batch->class_ids);
      }
    }

    const ValResult val = run_val();
    if (!std::isfinite(val.loss)) {
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    EpochLog row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(seen);
    row.val_loss = val.loss;
    row.val_acc = val.acc;
    row.lr = lr;
    row.seconds =
        cfg.record_time ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() : 0.0;
    result.log.push_back(row);
    if (cfg.on_epoch) cfg.on_epoch(row);

    if (val.loss < result.best_val_loss) {
      result.best_val_loss = val.loss;
      result.best_epoch = epoch;
      result.best = archive_from_model(model);
    }
    sched.step(val.loss);
    if (stopper.step(val.loss)) {
      result.stopped_early = true;
      break;
    }
  }
  apply(model, result.best, true);
  model.set_mode(Mode::eval);
  return result;
}

std::string format_train_log(const std::vector<EpochLog>& log) {
  std::string out = "epoch,train_loss,val_loss,val_acc,lr,seconds\n";
  char line[160];
  for (const auto& r : log) {
    std::snprintf(line, sizeof line, "%zu,%.6f,%.6f,%.6f,%.6g,%.3f\n", r.epoch, r.train_loss, r.val_loss, r.val_acc,
                  r.lr, r.seconds);
    out += line;
  }
  return out;
}

void write_train_log(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write training log '" + path.string() + "'");
  out << format_train_log(log);
}

}  // namespace leafvit
