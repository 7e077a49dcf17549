// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "cycleseg/crm.hpp"
#include "cycleseg/errors.hpp"
#include "cycleseg/ops.hpp"
#include "oracle.hpp"

using namespace cycleseg;

namespace {

LevelParams level(std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  return {init_convlstm(width, width, rng), init_rcm(width, rng), init_baseline(width, rng)};
}

ModelConfig toy_model() {
  ModelConfig cfg;
  cfg.encoder.channels = {3, 4};
  cfg.levels = 2;
  cfg.lstm_width = 4;
  cfg.crm.steps = 2;
  return cfg;
}

std::vector<ConvLSTMState> random_states(std::size_t k, std::size_t width, oracle::Rng& rng) {
  std::vector<ConvLSTMState> s;
  for (std::size_t i = 0; i < k; ++i)
    s.push_back({oracle::random_tensor({1, width, 4, 4}, rng), oracle::random_tensor({1, width, 4, 4}, rng)});
  return s;
}

}  // namespace

TEST(Refine, IdenticalBranchesStayIdentical) {
  const auto p = level(4, 1);
  oracle::Rng rng(2);
  const auto one = random_states(1, 4, rng)[0];
  const std::vector<ConvLSTMState> init{one, one};
  CRMConfig cfg;
  const auto r = refine(init, cfg, p);
  ASSERT_EQ(r.trace.size(), 7u);
  for (const auto& step : r.trace) {
    EXPECT_TRUE(identical(step[0].cell, step[1].cell));
    EXPECT_TRUE(identical(step[0].hidden, step[1].hidden));
  }
}

TEST(Refine, OneStepIsExchangeThenCell) {
  const auto p = level(3, 3);
  oracle::Rng rng(4);
  const auto init = random_states(2, 3, rng);
  CRMConfig cfg;
  cfg.steps = 1;
  const auto r = refine(init, cfg, p);
  const Tensor srcb[] = {init[1].cell}, srca[] = {init[0].cell};
  const Tensor xa = rcm_forward(init[0].cell, region_bank(srcb, p.rcm, {}), srcb, p.rcm);
  const Tensor xb = rcm_forward(init[1].cell, region_bank(srca, p.rcm, {}), srca, p.rcm);
  EXPECT_TRUE(identical(r.states[0].hidden, cell_step(xa, init[0], p.lstm).hidden));
  EXPECT_TRUE(identical(r.states[1].cell, cell_step(xb, init[1], p.lstm).cell));
}

TEST(Refine, UpdateIsSynchronous) {
  // Step t of branch 1 reads branch 0's step t-1 cell, not its fresh one.
  const auto p = level(3, 5);
  oracle::Rng rng(6);
  const auto init = random_states(2, 3, rng);
  CRMConfig cfg;
  cfg.steps = 2;
  const auto r = refine(init, cfg, p);
  const std::vector<Tensor> prev{r.trace[0][0].cell, r.trace[0][1].cell};
  const Tensor x1 = exchange_input(1, prev, cfg, p);
  EXPECT_TRUE(identical(r.trace[1][1].cell, cell_step(x1, r.trace[0][1], p.lstm).cell));
}

TEST(Refine, TraceStepsChain) {
  const auto p = level(3, 7);
  oracle::Rng rng(8);
  const auto init = random_states(3, 3, rng);
  CRMConfig cfg;
  cfg.steps = 4;
  const auto full = refine(init, cfg, p);
  ASSERT_EQ(full.trace.size(), 4u);
  cfg.steps = 1;
  const auto resumed = refine(full.trace[1], cfg, p);
  for (std::size_t b = 0; b < 3; ++b) EXPECT_TRUE(identical(resumed.states[b].cell, full.trace[2][b].cell));
}

TEST(Refine, Errors) {
  const auto p = level(3, 9);
  oracle::Rng rng(10);
  CRMConfig cfg;
  EXPECT_THROW(refine(random_states(1, 3, rng), cfg, p), GroupTooSmall);
  auto mixed = random_states(2, 3, rng);
  mixed[1].cell = Tensor::zeros({1, 3, 2, 2});
  EXPECT_THROW(refine(mixed, cfg, p), ShapeError);
  cfg.steps = 0;
  EXPECT_THROW(refine(random_states(2, 3, rng), cfg, p), InvalidConfig);
  cfg.steps = 1;
  cfg.exchange = ExchangeKind::cat;
  EXPECT_THROW(refine(random_states(3, 3, rng), cfg, p), InvalidConfig);
}

TEST(Refine, ThreeStepGradient) {
  const auto base = level(3, 11);
  oracle::Rng rng(12);
  const auto init = random_states(2, 3, rng);
  const Tensor w = oracle::weights_like(init[0].cell);
  CRMConfig cfg;
  cfg.steps = 3;
  const oracle::ScalarFn f = [&](std::span<const Tensor> in) {
    LevelParams p = base;
    p.lstm.w_xf = in[2];
    p.rcm.project_source.weight = in[3];
    const std::vector<ConvLSTMState> s{{in[0], in[0]}, {in[1], in[1]}};
    const auto r = refine(s, cfg, p);
    return ops::add(oracle::readout(r.states[0].hidden, w), oracle::readout(r.states[1].cell, w));
  };
  EXPECT_LT(oracle::gradient_error(f, {init[0].cell, init[1].cell, base.lstm.w_xf, base.rcm.project_source.weight}, 1e-4),
            1e-4);
}

TEST(ForwardFull, ShapesAndIdenticalImages) {
  ModelConfig cfg;
  cfg.crm.steps = 2;
  const auto params = init_model(cfg, 1);
  oracle::Rng rng(13);
  const Tensor img = oracle::random_tensor({1, 3, 64, 64}, rng, 0, 1);
  const Tensor imgs[] = {img, img};
  const auto r = forward_full(imgs, params, cfg, true);
  ASSERT_EQ(r.logits.size(), 2u);
  EXPECT_EQ(r.logits[0].shape(), (Shape{1, 2, 64, 64}));
  EXPECT_TRUE(identical(r.logits[0], r.logits[1]));
  ASSERT_EQ(r.step_logits.size(), 2u);
  EXPECT_TRUE(identical(r.step_logits[1][0], r.logits[0]));
}

TEST(ForwardFull, BranchPermutationIsEquivariant) {
  ModelConfig cfg = toy_model();
  auto params = init_model(cfg, 2);
  Rng head(3);
  params.decoder.head = make_conv(2, 3, 1, 1, 0, head);
  oracle::Rng rng(14);
  const Tensor a = oracle::random_tensor({1, 3, 16, 16}, rng, 0, 1), b = oracle::random_tensor({1, 3, 16, 16}, rng, 0, 1);
  const Tensor c = oracle::random_tensor({1, 3, 16, 16}, rng, 0, 1);
  const Tensor abc[] = {a, b, c}, cab[] = {c, a, b};
  const auto x = forward_full(abc, params, cfg).logits, y = forward_full(cab, params, cfg).logits;
  EXPECT_TRUE(identical(x[0], y[1]));
  EXPECT_TRUE(identical(x[1], y[2]));
  EXPECT_TRUE(identical(x[2], y[0]));
  EXPECT_FALSE(identical(x[0], x[1]));
}

TEST(ForwardFull, ToyGradientMatchesFiniteDifferences) {
  ModelConfig cfg = toy_model();
  auto base = init_model(cfg, 4);
  Rng head(5);
  base.decoder.head = make_conv(2, 3, 1, 1, 0, head);
  oracle::Rng rng(15);
  const Tensor a = oracle::random_tensor({1, 3, 16, 16}, rng, 0, 1), b = oracle::random_tensor({1, 3, 16, 16}, rng, 0, 1);
  const Tensor w = oracle::weights_like(Tensor::zeros({1, 2, 16, 16}));
  const oracle::ScalarFn f = [&](std::span<const Tensor> in) {
    ModelParams p = base;
    p.levels[0].lstm.w_hi = in[0];
    p.levels[1].rcm.fuse.bias = in[1];
    p.decoder.fuse[0].merge.bias = in[2];
    const Tensor imgs[] = {a, b};
    const auto r = forward_full(imgs, p, cfg);
    return ops::add(oracle::readout(r.logits[0], w), oracle::readout(r.logits[1], w));
  };
  EXPECT_LT(oracle::gradient_error(f, {base.levels[0].lstm.w_hi, base.levels[1].rcm.fuse.bias, base.decoder.fuse[0].merge.bias},
                                   1e-4),
            1e-4);
}

TEST(ModelParams, NamedAndFlatRoundTrips) {
  const ModelConfig cfg = toy_model();
  const auto a = init_model(cfg, 6), b = init_model(cfg, 7);
  const auto named = named_tensors(a);
  std::set<std::string> names;
  for (const auto& t : named) names.insert(t.name);
  EXPECT_EQ(names.size(), named.size());
  auto c = b;
  assign_named(c, named);
  const auto back = flat_tensors(c), orig = flat_tensors(a);
  ASSERT_EQ(back.size(), orig.size());
  for (std::size_t i = 0; i < orig.size(); ++i) EXPECT_TRUE(identical(back[i], orig[i]));
  const auto d = with_flat_tensors(b, orig);
  EXPECT_TRUE(identical(flat_tensors(d)[3], orig[3]));
  auto wrong = named;
  wrong.pop_back();
  EXPECT_THROW(assign_named(c, wrong), Error);
}

TEST(ForwardFull, RejectsSingleImage) {
  const ModelConfig cfg = toy_model();
  const auto p = init_model(cfg, 8);
  const Tensor one[] = {Tensor::zeros({1, 3, 16, 16})};
  EXPECT_THROW(forward_full(one, p, cfg), GroupTooSmall);
}
