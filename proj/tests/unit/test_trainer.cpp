#include <cmath>

#include "doctest.h"
#include "leafvit/data.hpp"
#include "leafvit/metrics.hpp"
#include "leafvit/model.hpp"
#include "leafvit/trainer.hpp"
#include "leafvit/weights_io.hpp"
#include "test_util.hpp"

using namespace leafvit;
using namespace leafvit::test;

namespace {

/// Small conv net on 16×16 inputs so full training runs in milliseconds.
ModelGraph tiny_model(std::uint64_t seed) {
  ModelGraph g(Architecture::custom, 3, 16, seed);
  CounterRng rng(seed, 1);
  g.add("conv", layers::conv_bn_act(3, 8, 3, Conv2dParams{2, 1, 1}, true, rng));
  g.add("pool", layers::global_avg_pool());
  g.mark_head();
  g.add("fc", layers::dense(8, 3, rng));
  return g;
}

struct Fixture {
  TempDir dir{"trainer"};
  DatasetIndex index;
  Fixture() {
    make_color_patch_dataset(dir.path(), 12, 16, 3);
    index = scan_dataset(dir.path(), 0);
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

TrainConfig quiet(std::size_t epochs, FineTune mode) {
  TrainConfig c;
  c.max_epochs = epochs;
  c.batch_size = 8;
  c.lr = 0.01;
  c.mode = mode;
  c.record_time = false;
  return c;
}

std::vector<float> parameters_of(const ModelGraph& m) {
  std::vector<float> out;
  for (const auto& p : m.named_tensors())
    if (p.role == TensorRole::parameter) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

}  // namespace

TEST_CASE("cross-entropy reference values") {
  const std::vector<std::size_t> t0{0};
  CHECK(cross_entropy_probs(Tensor({1, 2}, {1.0f, 0.0f}), t0) == 0.0);
  CHECK(cross_entropy_probs(Tensor({1, 2}, {0.5f, 0.5f}), t0) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(cross_entropy_probs(Tensor({1, 2}, {0.0f, 1.0f}), t0) == doctest::Approx(-std::log(kProbFloor)));
  const std::vector<std::size_t> t3{3, 7};
  CHECK(cross_entropy(TensorD::zeros({2, 10}), t3).item() == doctest::Approx(2.302585).epsilon(1e-7));
  CHECK(cross_entropy_probs(Tensor::full({2, 10}, 0.1f), t3) == doctest::Approx(2.302585).epsilon(1e-6));
  // overflow-safe logits
  const auto big = cross_entropy(TensorD({1, 3}, {1e4, 0.0, -1e4}), t0).item();
  CHECK(big == doctest::Approx(0.0));
  CHECK_THROWS_AS(cross_entropy(TensorD::zeros({2, 3}), std::vector<std::size_t>{0, 3}), LabelError);
  CHECK_THROWS_AS(cross_entropy_probs(Tensor::zeros({1, 3}), std::vector<std::size_t>{5}), LabelError);
  CHECK_THROWS_AS(cross_entropy(TensorD::zeros({1, 1}), t0), DimensionError);
}

TEST_CASE("Adam follows torch.optim.Adam") {
  const auto c = load_json("primitives.json").at("adam");
  auto w = from_json<float>(c.at("w0"));
  AdamMoments st;
  std::uint64_t t = 0;
  for (const auto& g : c.at("grads")) {
    const auto gt = from_json<float>(g);
    adam_update(w.mutable_data(), gt.data(), st, ++t, c.at("lr").get<double>());
  }
  CHECK(max_abs_diff(w, from_json(c.at("w"))) < 1e-6);
}

TEST_CASE("Adam closed-form steps") {
  std::vector<float> w{0.5f, -1.0f, 2.0f};
  const std::vector<float> ones(3, 1.0f);
  AdamMoments st;
  adam_update(w, ones, st, 1, 0.001);
  CHECK(w[0] == doctest::Approx(0.499).epsilon(1e-6));
  CHECK(w[1] == doctest::Approx(-1.001).epsilon(1e-6));

  std::vector<float> z{0.25f, 4.0f};
  AdamMoments zs;
  adam_update(z, std::vector<float>(2, 0.0f), zs, 1, 0.1);
  CHECK(z == std::vector<float>{0.25f, 4.0f});
}

TEST_CASE("Adam matches a straight-line scalar version for 100 steps") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CounterRng rng(seed, 3);
    std::vector<float> w{float(rng.uniform(-1, 1))};
    float ref = w[0];
    double m = 0, v = 0;
    AdamMoments st;
    for (std::uint64_t t = 1; t <= 100; ++t) {
      const float g = float(rng.normal());
      adam_update(w, std::vector<float>{g}, st, t, 0.01);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * double(g) * g;
      const double mh = m / (1 - std::pow(0.9, double(t))), vh = v / (1 - std::pow(0.999, double(t)));
      ref = float(double(ref) - 0.01 * mh / (std::sqrt(vh) + 1e-8));
    }
    CHECK(std::abs(w[0] - ref) < 1e-7);
  }
}

TEST_CASE("Adam refuses non-finite gradients before touching any weight") {
  Tensor a({2}, {1.0f, 2.0f}), b({2}, {3.0f, 4.0f});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Adam opt({{"a", a}, {"b", b}});
  backward(sum(add(a, mul(b, Tensor({2}, {1.0f, NAN})))));
  try {
    opt.step(0.1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("'b'") != std::string::npos);
  }
  CHECK(a.data()[0] == 1.0f);
  CHECK(opt.steps() == 0);
}

TEST_CASE("plateau scheduler walk-throughs") {
  PlateauConfig cfg;  // factor 0.1, patience 2
  PlateauScheduler improving(0.001, cfg);
  for (double l : {1.0, 0.9, 0.8}) CHECK(improving.step(l) == 0.001);

  PlateauScheduler flat(0.001, cfg);
  CHECK(flat.step(1.0) == 0.001);
  CHECK(flat.step(1.0) == 0.001);
  CHECK(flat.step(1.0) == doctest::Approx(0.0001));

  cfg.min_lr = 2e-5;
  PlateauScheduler floored(0.001, cfg);
  for (int i = 0; i < 30; ++i) CHECK(floored.step(5.0) >= 2e-5);
  CHECK(floored.lr() == doctest::Approx(2e-5));

  cfg.min_delta = 0.05;
  PlateauScheduler delta(1.0, cfg);
  delta.step(1.0);
  delta.step(0.97);  // not enough
  CHECK(delta.step(0.96) == doctest::Approx(0.1));

  CHECK_THROWS_AS(PlateauScheduler(0.1, PlateauConfig{1.0, 2, 0.0, 0.0}), ConfigError);
}

TEST_CASE("early stopping after `patience` non-improving epochs") {
  EarlyStopping s(EarlyStopConfig{5, 0.0});
  std::size_t stopped_at = 0;
  for (std::size_t epoch = 1; epoch <= 20 && !stopped_at; ++epoch)
    if (s.step(1.0 + double(epoch))) stopped_at = epoch;
  CHECK(stopped_at == 6);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lr = 0;
  CHECK_NOTHROW(c.validate());
  c.lr = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.max_epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.max_epochs = 1001;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.scheduler.factor = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_fine_tune("full") == FineTune::full);
  CHECK_THROWS_AS(parse_fine_tune("partial"), ConfigError);
}

TEST_CASE("training returns the best checkpoint and logs every epoch") {
  for (auto mode : {FineTune::head_only, FineTune::full}) {
    CAPTURE(to_string(mode));
    auto m = tiny_model(1);
    const auto r = train(m, fixture().index, quiet(6, mode));
    CHECK(r.log.size() == 6);
    for (std::size_t i = 0; i < r.log.size(); ++i) {
      CHECK(r.log[i].epoch == i + 1);
      CHECK(r.log[i].seconds == 0.0);
      CHECK(r.best_val_loss <= r.log[i].val_loss);
    }
    CHECK(r.log[r.best_epoch - 1].val_loss == r.best_val_loss);
    CHECK(archive_from_model(m) == r.best);
    CHECK(m.mode() == Mode::eval);
    // the returned weights reproduce the logged best loss
    const auto report = evaluate(m, fixture().index, Split::val, 8);
    CHECK(report.loss == doctest::Approx(r.best_val_loss).epsilon(1e-5));
  }
}

TEST_CASE("head-only training leaves the backbone and its statistics untouched") {
  auto m = tiny_model(2);
  const auto before = archive_from_model(m);
  (void)train(m, fixture().index, quiet(3, FineTune::head_only));
  const auto after = archive_from_model(m);
  for (const auto& t : before.tensors) {
    CAPTURE(t.name);
    const bool head = t.name.starts_with("fc.");
    if (!head) CHECK(after.find(t.name)->data == t.data);
  }
  CHECK_FALSE(after == before);
}

TEST_CASE("lr 0 leaves every weight unchanged") {
  for (auto mode : {FineTune::head_only, FineTune::full}) {
    auto m = tiny_model(3);
    const auto before = parameters_of(m);
    auto cfg = quiet(2, mode);
    cfg.lr = 0;
    (void)train(m, fixture().index, cfg);
    CHECK(parameters_of(m) == before);
  }
}

TEST_CASE("evaluation does not mutate the model") {
  auto m = tiny_model(4);
  const auto before = archive_from_model(m);
  (void)evaluate(m, fixture().index, Split::val, 4);
  (void)evaluate(m, fixture().index, Split::train, 5);
  CHECK(archive_from_model(m) == before);
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto a = tiny_model(5), b = tiny_model(5);
  auto cfg = quiet(3, FineTune::full);
  cfg.seed = 9;
  const auto ra = train(a, fixture().index, cfg);
  const auto rb = train(b, fixture().index, cfg);
  CHECK(ra.best == rb.best);
  CHECK(format_train_log(ra.log) == format_train_log(rb.log));
}

TEST_CASE("training rejects mismatched heads and empty splits") {
  auto m = tiny_model(6);
  TempDir dir("two_class");
  make_color_patch_dataset(dir.path(), 3, 16, 0);
  fs::remove_all(dir / "red_patch");
  CHECK_THROWS_AS(train(m, scan_dataset(dir.path(), 0), quiet(1, FineTune::full)), LabelError);
}

TEST_CASE("log CSV columns") {
  std::vector<EpochLog> log{{1, 1.5, 1.25, 0.5, 0.001, 0.0}, {2, 1.0, 0.75, 0.875, 0.0001, 0.0}};
  const auto text = format_train_log(log);
  CHECK(text.starts_with("epoch,train_loss,val_loss,val_acc,lr,seconds\n1,"));
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}

TEST_CASE("toy: train loss falls from epoch 1 to epoch 3 for at least 95% of seeds") {
  TempDir dir("toy");
  make_color_patch_dataset(dir.path(), 64, 224, 0);
  std::size_t falling = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto index = scan_dataset(dir.path(), seed);
    auto m = build_mobilevitv2_050(3, seed);
    TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.seed = seed;
    cfg.record_time = false;
    const auto r = train(m, index, cfg);
    REQUIRE(r.log.size() == 3);
    if (r.log[0].train_loss > r.log[2].train_loss) ++falling;
  }
  CHECK(falling >= 10);  // 95% of ten seeds rounds up to all of them
}
