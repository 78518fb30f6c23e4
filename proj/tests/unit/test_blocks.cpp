#include "doctest.h"
#include "leafvit/attention.hpp"
#include "leafvit/blocks.hpp"
#include "leafvit/op_counter.hpp"
#include "leafvit/ops.hpp"
#include "suites.hpp"
#include "test_util.hpp"

using namespace leafvit;
using namespace leafvit::test;

namespace {

const json& blocks_oracle() {
  static const json j = load_json("blocks.json");
  return j;
}

}  // namespace

TEST_CASE("separable attention matches the reference port") {
  const auto& c = blocks_oracle().at("attention");
  const auto& w = c.at("weights");
  SeparableAttentionWeights<double> sw{from_json(w.at("input.weight")), from_json(w.at("input.bias")),
                                       from_json(w.at("key.weight")),   from_json(w.at("key.bias")),
                                       from_json(w.at("value.weight")), from_json(w.at("value.bias")),
                                       from_json(w.at("out_proj.weight")), from_json(w.at("out_proj.bias"))};
  const auto y = separable_self_attention(from_json(c.at("tokens")), sw);
  CHECK(max_abs_diff(y, from_json(c.at("y"))) < 1e-10);
}

TEST_CASE("bottleneck matches the reference port in eval mode") {
  for (const auto& c : blocks_oracle().at("bottleneck")) {
    BottleneckBlockCfg cfg{c.at("in_ch"), c.at("out_ch"), c.at("stride"), 2.0};
    CAPTURE(cfg.in_ch);
    CAPTURE(cfg.stride);
    CounterRng rng(1);
    auto w = make_bottleneck<double>(cfg, rng);
    ParamList<double> params;
    collect(w, "blk", params);
    REQUIRE(assign_named(params, c.at("weights")) == "");
    const auto y = bottleneck_forward(from_json(c.at("x")), cfg, w, Mode::eval);
    CHECK(max_abs_diff(y, from_json(c.at("y"))) < 1e-9);
  }
}

TEST_CASE("MobileViTV2 block matches the reference port in eval mode") {
  for (const char* key : {"mv_block", "mv_block_odd"}) {
    CAPTURE(key);
    const auto& c = blocks_oracle().at(key);
    MobileViTV2BlockCfg cfg;
    cfg.channels = c.at("channels");
    cfg.attn_dim = c.at("attn_dim");
    cfg.depth = c.at("depth");
    CounterRng rng(1);
    auto w = make_mobilevitv2_block<double>(cfg, rng);
    ParamList<double> params;
    collect(w, "blk", params);
    REQUIRE(assign_named(params, c.at("weights")) == "");
    CounterRng drop(0);
    const auto y = mobilevitv2_block_forward(from_json(c.at("x")), cfg, w, Mode::eval, drop);
    CHECK(max_abs_diff(y, from_json(c.at("y"))) < 1e-9);
  }
}

namespace {

void zero(TensorD t) {
  for (auto& v : t.mutable_data()) v = 0;
}

template <class W>
ParamList<double> params_of(const W& w) {
  ParamList<double> list;
  collect(w, "b", list);
  return list;
}

void randomize(const ParamList<double>& list, CounterRng& rng) {
  for (const auto& p : list) {
    TensorD t = p.tensor;
    const bool var = p.name.ends_with("running_var");
    for (auto& v : t.mutable_data()) v = var ? rng.uniform(0.5, 1.5) : rng.uniform(-0.5, 0.5);
  }
}

}  // namespace

TEST_CASE("bottleneck with a zero branch and identity batch-norm returns its input") {
  const BottleneckBlockCfg cfg{8, 8, 1, 2.0};
  CounterRng rng(2);
  auto w = make_bottleneck<double>(cfg, rng);
  zero(w.expand.weight);
  zero(w.depthwise.weight);
  zero(w.project.weight);
  const auto x = random_tensor<double>({2, 8, 5, 5}, rng);
  CHECK(max_abs_diff(bottleneck_forward(x, cfg, w, Mode::eval), x) == 0);
}

TEST_CASE("bottleneck equals its composed primitives and applies the skip only when shapes allow") {
  for (const BottleneckBlockCfg cfg : {BottleneckBlockCfg{6, 6, 1, 2.0}, BottleneckBlockCfg{6, 10, 1, 2.0},
                                       BottleneckBlockCfg{6, 6, 2, 2.0}}) {
    CAPTURE(cfg.out_ch);
    CAPTURE(cfg.stride);
    CounterRng rng(3);
    auto w = make_bottleneck<double>(cfg, rng);
    randomize(params_of(w), rng);
    const auto x = random_tensor<double>({2, 6, 7, 6}, rng);
    const auto branch = conv_bn_act(conv_bn_act(conv_bn_act(x, w.expand, Mode::eval), w.depthwise, Mode::eval),
                                    w.project, Mode::eval);
    CHECK(max_abs_diff(bottleneck_branch(x, cfg, w, Mode::eval), branch) == 0);
    const auto y = bottleneck_forward(x, cfg, w, Mode::eval);
    CHECK(max_abs_diff(y, cfg.has_skip() ? add(branch, x) : branch) == 0);
  }
  CHECK(BottleneckBlockCfg{16, 16, 1, 2.0}.hidden_ch() == 32);
}

TEST_CASE("stride-2 bottleneck halves 56×56") {
  const BottleneckBlockCfg cfg{16, 24, 2, 2.0};
  CounterRng rng(4);
  const auto w = make_bottleneck<float>(cfg, rng);
  const auto y = bottleneck_forward(Tensor::zeros({1, 16, 56, 56}), cfg, w, Mode::eval);
  CHECK(y.shape() == Shape{1, 24, 28, 28});
}

TEST_CASE("MobileViTV2 block keeps the input shape") {
  MobileViTV2BlockCfg cfg;
  cfg.channels = 64;
  cfg.attn_dim = 64;
  cfg.depth = 2;
  CounterRng rng(5);
  const auto w = make_mobilevitv2_block<float>(cfg, rng);
  CounterRng drop(0);
  const auto y = mobilevitv2_block_forward(random_tensor<float>({1, 64, 28, 28}, rng), cfg, w, Mode::eval, drop);
  CHECK(y.shape() == Shape{1, 64, 28, 28});
}

TEST_CASE("MobileViTV2 block preserves odd and even spatial sizes") {
  MobileViTV2BlockCfg cfg;
  cfg.channels = 3;
  cfg.attn_dim = 4;
  CounterRng rng(6);
  const auto w = make_mobilevitv2_block<double>(cfg, rng);
  for (std::size_t h = 2; h <= 9; ++h)
    for (std::size_t wd = 2; wd <= 9; wd += 3) {
      CounterRng drop(0);
      const auto y = mobilevitv2_block_forward(random_tensor<double>({1, 3, h, wd}, rng), cfg, w, Mode::train, drop);
      CHECK(y.shape() == Shape{1, 3, h, wd});
    }
}

TEST_CASE("MobileViTV2 block with zeroed attention and FFN reduces to its conv pipeline") {
  MobileViTV2BlockCfg cfg;
  cfg.channels = 5;
  cfg.attn_dim = 6;
  cfg.depth = 2;
  CounterRng rng(7);
  auto w = make_mobilevitv2_block<double>(cfg, rng);
  randomize(params_of(w), rng);
  for (auto& l : w.layers) {
    for (auto t : {l.attn.input_w, l.attn.input_b, l.attn.key_w, l.attn.key_b, l.attn.value_w, l.attn.value_b,
                   l.attn.out_w, l.attn.out_b, l.ffn.w1, l.ffn.b1, l.ffn.w2, l.ffn.b2})
      zero(t);
  }
  for (auto& v : w.final_norm.gamma.mutable_data()) v = 1.0;
  zero(w.final_norm.beta);
  const auto x = random_tensor<double>({2, 5, 6, 4}, rng);
  const auto local = conv2d(conv_bn_act(x, w.local_dw, Mode::eval), w.local_proj, TensorD(), Conv2dParams{});
  const auto normed = group_norm(local, 1, w.final_norm.gamma, w.final_norm.beta);
  const auto want = conv_bn_act(normed, w.out_proj, Mode::eval);
  CounterRng drop(0);
  CHECK(max_abs_diff(mobilevitv2_block_forward(x, cfg, w, Mode::eval, drop), want) < 1e-12);
}

TEST_CASE("MobileViTV2 block maps zero input to zero at initialization") {
  MobileViTV2BlockCfg cfg;
  cfg.channels = 4;
  cfg.attn_dim = 8;
  CounterRng rng(8);
  const auto w = make_mobilevitv2_block<double>(cfg, rng);
  CounterRng drop(0);
  const auto y = mobilevitv2_block_forward(TensorD::zeros({1, 4, 6, 6}), cfg, w, Mode::eval, drop);
  CHECK(max_abs_diff(y, TensorD::zeros({1, 4, 6, 6})) == 0);
}

TEST_CASE("blocks pass the finite-difference check on d=4, 8×8 with a sum loss") {
  for (const auto& c : gradient_cases()) {
    if (!c.name.starts_with("block.")) continue;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto r = c.run(seed);
      CAPTURE(c.name);
      CAPTURE(seed);
      CAPTURE(r.worst);
      CHECK(r.max_rel_error <= kGradTolerance);
    }
  }
}

TEST_CASE("blocks reject a channel mismatch") {
  CounterRng rng(9);
  const auto bw = make_bottleneck<double>({4, 4, 1, 2.0}, rng);
  CHECK_THROWS_AS(bottleneck_forward(TensorD::zeros({1, 3, 4, 4}), {4, 4, 1, 2.0}, bw, Mode::eval), DimensionError);
  MobileViTV2BlockCfg cfg;
  cfg.channels = 4;
  cfg.attn_dim = 4;
  const auto mw = make_mobilevitv2_block<double>(cfg, rng);
  CounterRng drop(0);
  CHECK_THROWS_AS(mobilevitv2_block_forward(TensorD::zeros({1, 5, 4, 4}), cfg, mw, Mode::eval, drop), DimensionError);
}
