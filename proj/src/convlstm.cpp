// SPDX-License-Identifier: Apache-2.0
#include "cycleseg/convlstm.hpp"

#include <cmath>

#include "cycleseg/errors.hpp"
#include "cycleseg/ops.hpp"

namespace cycleseg {

namespace {

Tensor gate_kernel(std::size_t width, Rng& rng) {
  const double fan = static_cast<double>(width * 9);
  std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / fan));
  std::vector<double> w(width * width * 9);
  for (auto& v : w) v = dist(rng);
  return Tensor({width, width, 3, 3}, std::move(w));
}

// W_x * X + W_h * H + b
Tensor gate_preactivation(const Tensor& x, const Tensor& h, const Tensor& wx, const Tensor& wh, const Tensor& b) {
  return ops::add(ops::conv2d(x, wx, b, 1, 1), ops::conv2d(h, wh, Tensor(), 1, 1));
}

}  // namespace

ConvLSTMParams init_convlstm(std::size_t in_channels, std::size_t width, Rng& rng) {
  ConvLSTMParams p;
  p.w_xi = gate_kernel(width, rng);
  p.w_hi = gate_kernel(width, rng);
  p.w_xf = gate_kernel(width, rng);
  p.w_hf = gate_kernel(width, rng);
  p.w_xo = gate_kernel(width, rng);
  p.w_ho = gate_kernel(width, rng);
  p.w_xc = gate_kernel(width, rng);
  p.w_hc = gate_kernel(width, rng);
  p.b_i = Tensor::zeros({width});
  p.b_f = Tensor::ones({width});
  p.b_o = Tensor::zeros({width});
  p.b_c = Tensor::zeros({width});
  p.projection = make_conv(width, in_channels, 1, 1, 0, rng);
  return p;
}

ConvLSTMState cell_step(const Tensor& input, const ConvLSTMState& prev, const ConvLSTMParams& params,
                        CellOptions options) {
  const std::size_t width = params.width();
  if (input.rank() != 4 || input.dim(1) != width)
    throw ShapeError("cell_step: input " + shape_str(input.shape()) + " does not have cell width " +
                     std::to_string(width));
  if (prev.hidden.shape() != input.shape() || prev.cell.shape() != input.shape())
    throw ShapeError("cell_step: state " + shape_str(prev.hidden.shape()) + "/" + shape_str(prev.cell.shape()) +
                     " does not match input " + shape_str(input.shape()));

  const Tensor& x = input;
  const Tensor& h = prev.hidden;
  Tensor i = ops::sigmoid(gate_preactivation(x, h, params.w_xi, params.w_hi, params.b_i));
  Tensor f = ops::sigmoid(gate_preactivation(x, h, params.w_xf, params.w_hf, params.b_f));
  Tensor o = ops::sigmoid(gate_preactivation(x, h, params.w_xo, params.w_ho, params.b_o));
  Tensor candidate = ops::tanh(gate_preactivation(x, h, params.w_xc, params.w_hc, params.b_c));
  if (!options.standard_lstm_candidate) candidate = ops::mul(i, candidate);
  Tensor c = ops::add(ops::mul(f, prev.cell), ops::mul(i, candidate));
  Tensor hidden = ops::mul(o, ops::tanh(c));
  return {hidden, c};
}

ConvLSTMState init_state(const Tensor& feature, const ConvLSTMParams& params) {
  if (feature.rank() != 4 || feature.dim(1) != params.projection.weight.dim(1))
    throw ShapeError("init_state: feature " + shape_str(feature.shape()) + " does not match projection " +
                     shape_str(params.projection.weight.shape()));
  Tensor z = apply(params.projection, feature);
  return {z, z};
}

}  // namespace cycleseg
