// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>

#include "cycleseg/layers.hpp"
#include "cycleseg/tensor.hpp"

namespace cycleseg {

/// Gate kernels are width x width x 3 x 3 (padding 1). The 1x1 projection
/// maps encoder features to the cell width for state initialisation.
struct ConvLSTMParams {
  Tensor w_xi, w_hi, w_xf, w_hf, w_xo, w_ho, w_xc, w_hc;
  Tensor b_i, b_f, b_o, b_c;
  ConvLayer projection;

  std::size_t width() const { return w_xi.dim(0); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w_xi", w_xi);
    f(prefix + ".w_hi", w_hi);
    f(prefix + ".w_xf", w_xf);
    f(prefix + ".w_hf", w_hf);
    f(prefix + ".w_xo", w_xo);
    f(prefix + ".w_ho", w_ho);
    f(prefix + ".w_xc", w_xc);
    f(prefix + ".w_hc", w_hc);
    f(prefix + ".b_i", b_i);
    f(prefix + ".b_f", b_f);
    f(prefix + ".b_o", b_o);
    f(prefix + ".b_c", b_c);
    projection.visit(prefix + ".projection", f);
  }
};

struct ConvLSTMState {
  Tensor hidden;
  Tensor cell;
};

struct CellOptions {
  /// false: the candidate already carries i_t and the cell update applies it
  /// again (double-gated candidate). true: the conventional LSTM with a
  /// single i_t factor.
  bool standard_lstm_candidate = false;
};

/// Xavier-style gate kernels, zero biases except forget = 1.
ConvLSTMParams init_convlstm(std::size_t in_channels, std::size_t width, Rng& rng);

/// i, f, o = sigmoid(W_x* X + W_h* H + b);  C~ = i (.) tanh(W_xc*X + W_hc*H + b_c);
/// C = f (.) C_prev + i (.) C~;  H = o (.) tanh(C).
ConvLSTMState cell_step(const Tensor& input, const ConvLSTMState& prev, const ConvLSTMParams& params,
                        CellOptions options = {});

/// H_0 = C_0 = 1x1 projection of the encoder feature.
ConvLSTMState init_state(const Tensor& feature, const ConvLSTMParams& params);

}  // namespace cycleseg
