// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "cycleseg/convlstm.hpp"
#include "cycleseg/errors.hpp"
#include "cycleseg/ops.hpp"
#include "oracle.hpp"

using namespace cycleseg;

namespace {

ConvLSTMParams zero_params(std::size_t in, std::size_t width) {
  Rng rng(0);
  ConvLSTMParams p = init_convlstm(in, width, rng);
  p.visit("", [](const std::string&, Tensor& t) { t = Tensor::zeros(t.shape()); });
  return p;
}

// The cell written out gate by gate from the plain ops, kept separate from
// the library's own composition.
ConvLSTMState reference_step(const Tensor& x, const ConvLSTMState& s, const ConvLSTMParams& p, bool standard) {
  auto gate = [&](const Tensor& wx, const Tensor& wh, const Tensor& b) {
    return ops::add(ops::conv2d(x, wx, b, 1, 1), ops::conv2d(s.hidden, wh, Tensor(), 1, 1));
  };
  const Tensor i = ops::sigmoid(gate(p.w_xi, p.w_hi, p.b_i));
  const Tensor f = ops::sigmoid(gate(p.w_xf, p.w_hf, p.b_f));
  const Tensor o = ops::sigmoid(gate(p.w_xo, p.w_ho, p.b_o));
  Tensor cand = ops::tanh(gate(p.w_xc, p.w_hc, p.b_c));
  if (!standard) cand = ops::mul(i, cand);
  const Tensor c = ops::add(ops::mul(f, s.cell), ops::mul(i, cand));
  return {ops::mul(o, ops::tanh(c)), c};
}

}  // namespace

TEST(ConvLSTM, AllZeroGivesZeroState) {
  const auto p = zero_params(4, 4);
  const Tensor z = Tensor::zeros({1, 4, 3, 3});
  const auto s = cell_step(z, {z, z}, p);
  for (double v : s.cell.values()) EXPECT_EQ(v, 0.0);
  for (double v : s.hidden.values()) EXPECT_EQ(v, 0.0);
}

TEST(ConvLSTM, SaturatedGatesPassMemoryThrough) {
  auto p = zero_params(3, 3);
  p.b_f = Tensor({3}, 40.0);
  p.b_i = Tensor({3}, -40.0);
  oracle::Rng rng(1);
  const Tensor c = oracle::random_tensor({1, 3, 4, 4}, rng), h = oracle::random_tensor({1, 3, 4, 4}, rng);
  const auto s = cell_step(oracle::random_tensor({1, 3, 4, 4}, rng), {h, c}, p);
  EXPECT_LT(max_abs_diff(s.cell, c), 1e-12);
}

TEST(ConvLSTM, MatchesGateByGateReference) {
  Rng init(2);
  const auto p = init_convlstm(4, 4, init);
  oracle::Rng rng(3);
  const Tensor x = oracle::random_tensor({1, 4, 5, 5}, rng);
  const ConvLSTMState s{oracle::random_tensor({1, 4, 5, 5}, rng), oracle::random_tensor({1, 4, 5, 5}, rng)};
  for (bool standard : {false, true}) {
    const auto got = cell_step(x, s, p, {standard});
    const auto want = reference_step(x, s, p, standard);
    EXPECT_TRUE(identical(got.cell, want.cell));
    EXPECT_TRUE(identical(got.hidden, want.hidden));
  }
}

TEST(ConvLSTM, DefaultCandidateAppliesInputGateTwice) {
  // With i forced to 1/2 and zero forget gate the two forms differ by that factor.
  auto p = zero_params(2, 2);
  p.b_f = Tensor({2}, -60.0);
  p.b_c = Tensor({2}, 0.5);
  const Tensor z = Tensor::zeros({1, 2, 2, 2});
  const auto twice = cell_step(z, {z, z}, p, {false});
  const auto standard = cell_step(z, {z, z}, p, {true});
  for (std::size_t k = 0; k < twice.cell.numel(); ++k) {
    EXPECT_NEAR(standard.cell[k], 0.5 * std::tanh(0.5), 1e-15);
    EXPECT_NEAR(twice.cell[k], 0.25 * std::tanh(0.5), 1e-15);
  }
}

TEST(ConvLSTM, HiddenBoundedByTanhOfCell) {
  Rng init(4);
  const auto p = init_convlstm(6, 6, init);
  oracle::Rng rng(5);
  const Tensor x = oracle::random_tensor({1, 6, 4, 4}, rng, -4, 4);
  const ConvLSTMState prev{oracle::random_tensor({1, 6, 4, 4}, rng, -3, 3), oracle::random_tensor({1, 6, 4, 4}, rng, -3, 3)};
  const auto s = cell_step(x, prev, p);
  for (std::size_t k = 0; k < s.hidden.numel(); ++k) {
    EXPECT_LE(std::abs(s.hidden[k]), std::abs(std::tanh(s.cell[k])));
    EXPECT_LE(std::abs(s.hidden[k]), 1.0);
  }
}

TEST(ConvLSTM, ShapeErrors) {
  Rng init(6);
  const auto p = init_convlstm(4, 4, init);
  const Tensor z = Tensor::zeros({1, 4, 3, 3});
  EXPECT_THROW(cell_step(Tensor::zeros({1, 3, 3, 3}), {z, z}, p), ShapeError);
  EXPECT_THROW(cell_step(z, {Tensor::zeros({1, 4, 2, 2}), z}, p), ShapeError);
  EXPECT_THROW(init_state(Tensor::zeros({1, 5, 3, 3}), p), ShapeError);
}

TEST(ConvLSTM, ThreeChainedStepsGradient) {
  Rng init(7);
  const auto base = init_convlstm(3, 3, init);
  oracle::Rng rng(8);
  const Tensor x = oracle::random_tensor({1, 3, 3, 3}, rng);
  const Tensor h0 = oracle::random_tensor({1, 3, 3, 3}, rng), c0 = oracle::random_tensor({1, 3, 3, 3}, rng);
  const Tensor w = oracle::weights_like(h0);
  const oracle::ScalarFn f = [&](std::span<const Tensor> in) {
    ConvLSTMParams p = base;
    p.w_xi = in[3];
    p.w_hc = in[4];
    p.b_f = in[5];
    ConvLSTMState s{in[1], in[2]};
    for (int t = 0; t < 3; ++t) s = cell_step(in[0], s, p);
    return ops::add(oracle::readout(s.hidden, w), oracle::readout(s.cell, w));
  };
  EXPECT_LT(oracle::gradient_error(f, {x, h0, c0, base.w_xi, base.w_hc, base.b_f}, 1e-4), 1e-4);
}

TEST(InitState, ProjectionSetsBothStates) {
  Rng init(9);
  const auto p = init_convlstm(5, 4, init);
  const auto zero = init_state(Tensor::zeros({1, 5, 3, 3}), p);
  for (double v : zero.hidden.values()) EXPECT_EQ(v, 0.0);
  oracle::Rng rng(10);
  const Tensor feat = oracle::random_tensor({1, 5, 3, 3}, rng);
  const auto a = init_state(feat, p), b = init_state(feat, p);
  EXPECT_TRUE(identical(a.hidden, a.cell));
  EXPECT_TRUE(identical(a.hidden, b.hidden));
  EXPECT_EQ(a.hidden.shape(), (Shape{1, 4, 3, 3}));
}

TEST(InitState, ProjectionGradient) {
  Rng init(11);
  const auto base = init_convlstm(5, 4, init);
  oracle::Rng rng(12);
  const Tensor feat = oracle::random_tensor({1, 5, 3, 3}, rng);
  const Tensor w = oracle::weights_like(init_state(feat, base).cell);
  const oracle::ScalarFn f = [&](std::span<const Tensor> in) {
    ConvLSTMParams p = base;
    p.projection.weight = in[1];
    p.projection.bias = in[2];
    return oracle::readout(init_state(in[0], p).cell, w);
  };
  EXPECT_LT(oracle::gradient_error(f, {feat, base.projection.weight, base.projection.bias}, 1e-5), 1e-5);
}
