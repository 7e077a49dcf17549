// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cycleseg/checkpoint.hpp"
#include "cycleseg/convlstm.hpp"
#include "cycleseg/layers.hpp"
#include "cycleseg/rcm.hpp"

namespace cycleseg {

struct CRMConfig {
  std::size_t steps = 7;
  ExchangeKind exchange = ExchangeKind::rcm;
  RoiSize roi{};
  bool standard_lstm_candidate = false;

  void validate() const;
};

/// Everything one refinement level owns; shared by all branches.
struct LevelParams {
  ConvLSTMParams lstm;
  RCMParams rcm;
  BaselineParams baseline;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    lstm.visit(prefix + ".lstm", f);
    rcm.visit(prefix + ".rcm", f);
    baseline.visit(prefix + ".baseline", f);
  }
};

struct RefineResult {
  std::vector<ConvLSTMState> states;
  /// trace[t][b]: state of branch b after step t + 1.
  std::vector<std::vector<ConvLSTMState>> trace;
};

/// Input X_t of branch `branch` computed from the previous cell states.
Tensor exchange_input(std::size_t branch, std::span<const Tensor> cells, const CRMConfig& cfg,
                      const LevelParams& params);

/// Synchronous refinement: every step reads all branches' previous cell
/// states, then advances every branch with the shared cell.
RefineResult refine(std::span<const ConvLSTMState> init, const CRMConfig& cfg, const LevelParams& params);

struct ModelConfig {
  EncoderConfig encoder{};
  /// Number of encoder stages (deepest first) that get their own CRM.
  std::size_t levels = 3;
  /// Cell width at the deepest level; shallower levels use the stage width.
  std::size_t lstm_width = 16;
  CRMConfig crm{};

  std::size_t level_stage(std::size_t level) const { return encoder.stages() - 1 - level; }
  std::size_t level_width(std::size_t level) const;
  void validate() const;
};

struct ModelParams {
  EncoderParams encoder;
  std::vector<LevelParams> levels;
  DecoderParams decoder;

  template <class F>
  void visit(F&& f) {
    encoder.visit("encoder", f);
    for (std::size_t i = 0; i < levels.size(); ++i) levels[i].visit("level" + std::to_string(i), f);
    decoder.visit("decoder", f);
  }
};

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);

std::vector<NamedTensor> named_tensors(ModelParams params);
/// Replaces every parameter by the same-named checkpoint tensor; names and
/// shapes must match exactly.
void assign_named(ModelParams& params, const std::vector<NamedTensor>& tensors);
/// Copy whose tensors are leaves on `tape`.
ModelParams watch(const ModelParams& params, Tape& tape);
std::vector<Tensor> flat_tensors(ModelParams params);
ModelParams with_flat_tensors(ModelParams params, const std::vector<Tensor>& tensors);

struct ForwardResult {
  /// 1 x 2 x H x W logits per image (channel 1 = foreground).
  std::vector<Tensor> logits;
  /// step_logits[t][i], filled when per-step decoding is requested.
  std::vector<std::vector<Tensor>> step_logits;
};

ForwardResult forward_full(std::span<const Tensor> images, const ModelParams& params, const ModelConfig& cfg,
                           bool per_step = false);

}  // namespace cycleseg
