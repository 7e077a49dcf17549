// SPDX-License-Identifier: Apache-2.0
#include "cycleseg/crm.hpp"

#include <map>

#include "cycleseg/errors.hpp"

namespace cycleseg {

void CRMConfig::validate() const {
  if (steps < 1) throw InvalidConfig("CRM needs at least one step");
  if (!roi.is_raw() && (roi.height == 0 || roi.width == 0)) throw InvalidConfig("ROI size must be positive or raw");
}

Tensor exchange_input(std::size_t branch, std::span<const Tensor> cells, const CRMConfig& cfg,
                      const LevelParams& params) {
  if (cells.size() < 2) throw GroupTooSmall("exchange needs at least two branches");
  switch (cfg.exchange) {
    case ExchangeKind::rcm:
      return rcm_group_forward(branch, cells, params.rcm, cfg.roi);
    case ExchangeKind::none:
      return cells[branch];
    case ExchangeKind::cat:
    case ExchangeKind::mul:
      if (cells.size() != 2) throw InvalidConfig("global-vector baselines are pairwise only");
      return baseline_exchange(cfg.exchange, cells[branch], cells[1 - branch], params.baseline);
  }
  throw InvalidConfig("unknown exchange kind");
}

RefineResult refine(std::span<const ConvLSTMState> init, const CRMConfig& cfg, const LevelParams& params) {
  cfg.validate();
  if (init.size() < 2) throw GroupTooSmall("refine: need at least two branches, got " + std::to_string(init.size()));
  for (const auto& s : init)
    if (s.cell.shape() != init[0].cell.shape() || s.hidden.shape() != init[0].cell.shape())
      throw ShapeError("refine: branch states differ in shape");

  const CellOptions options{cfg.standard_lstm_candidate};
  RefineResult result;
  result.states.assign(init.begin(), init.end());
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    std::vector<Tensor> cells;
    for (const auto& s : result.states) cells.push_back(s.cell);
    std::vector<ConvLSTMState> next;
    for (std::size_t b = 0; b < cells.size(); ++b) {
      Tensor x = exchange_input(b, cells, cfg, params);
      next.push_back(cell_step(x, result.states[b], params.lstm, options));
    }
    result.states = next;
    result.trace.push_back(std::move(next));
  }
  return result;
}

std::size_t ModelConfig::level_width(std::size_t level) const {
  return level == 0 ? lstm_width : encoder.channels[level_stage(level)];
}

void ModelConfig::validate() const {
  encoder.validate();
  crm.validate();
  if (levels < 1 || levels > encoder.stages()) throw InvalidConfig("levels must lie in [1, encoder stages]");
  if (lstm_width == 0) throw InvalidConfig("lstm_width must be positive");
}

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams p;
  p.encoder = init_encoder(cfg.encoder, rng);
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    const std::size_t width = cfg.level_width(l);
    LevelParams level;
    level.lstm = init_convlstm(cfg.encoder.channels[cfg.level_stage(l)], width, rng);
    level.rcm = init_rcm(width, rng);
    level.baseline = init_baseline(width, rng);
    p.levels.push_back(std::move(level));
  }
  p.decoder = init_decoder(cfg.encoder, cfg.lstm_width, cfg.levels - 1, rng);
  return p;
}

std::vector<NamedTensor> named_tensors(ModelParams params) {
  std::vector<NamedTensor> out;
  params.visit([&](const std::string& name, Tensor& t) { out.push_back({name, t.detach()}); });
  return out;
}

void assign_named(ModelParams& params, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& t : tensors)
    if (!by_name.emplace(t.name, &t.value).second) throw FormatError("duplicate tensor name " + t.name);
  std::size_t used = 0;
  params.visit([&](const std::string& name, Tensor& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks tensor " + name);
    if (it->second->shape() != t.shape())
      throw FormatError("tensor " + name + " has shape " + shape_str(it->second->shape()) + ", model expects " +
                        shape_str(t.shape()));
    t = *it->second;
    ++used;
  });
  if (used != tensors.size()) throw FormatError("checkpoint holds tensors the model does not use");
}

ModelParams watch(const ModelParams& params, Tape& tape) {
  ModelParams tracked = params;
  tracked.visit([&](const std::string&, Tensor& t) { t = tape.watch(t); });
  return tracked;
}

std::vector<Tensor> flat_tensors(ModelParams params) {
  std::vector<Tensor> out;
  params.visit([&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

ModelParams with_flat_tensors(ModelParams params, const std::vector<Tensor>& tensors) {
  std::size_t i = 0;
  params.visit([&](const std::string& name, Tensor& t) {
    if (i >= tensors.size() || tensors[i].shape() != t.shape())
      throw ShapeError("with_flat_tensors: mismatch at " + name);
    t = tensors[i++];
  });
  if (i != tensors.size()) throw ShapeError("with_flat_tensors: too many tensors");
  return params;
}

ForwardResult forward_full(std::span<const Tensor> images, const ModelParams& params, const ModelConfig& cfg,
                           bool per_step) {
  cfg.validate();
  if (images.size() < 2) throw GroupTooSmall("forward_full: need at least two images");
  if (params.levels.size() != cfg.levels) throw ShapeError("forward_full: parameter levels do not match config");

  std::vector<FeaturePyramid> pyramids;
  for (const auto& img : images) {
    if (img.shape() != images[0].shape()) throw ShapeError("forward_full: images differ in shape");
    pyramids.push_back(encode(img, params.encoder));
  }

  std::vector<RefineResult> refined;
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    std::vector<ConvLSTMState> init;
    for (const auto& pyr : pyramids) init.push_back(init_state(pyr[cfg.level_stage(l)], params.levels[l].lstm));
    refined.push_back(refine(init, cfg.crm, params.levels[l]));
  }

  auto decode_branch = [&](std::size_t b, auto state_of) {
    std::vector<Tensor> skips;
    for (std::size_t l = 1; l < cfg.levels; ++l) skips.push_back(state_of(l, b).hidden);
    return decode(state_of(0, b).hidden, skips, params.decoder);
  };

  ForwardResult result;
  for (std::size_t b = 0; b < images.size(); ++b)
    result.logits.push_back(
        decode_branch(b, [&](std::size_t l, std::size_t br) -> const ConvLSTMState& { return refined[l].states[br]; }));
  if (per_step) {
    for (std::size_t t = 0; t < cfg.crm.steps; ++t) {
      std::vector<Tensor> step;
      for (std::size_t b = 0; b < images.size(); ++b)
        step.push_back(decode_branch(
            b, [&](std::size_t l, std::size_t br) -> const ConvLSTMState& { return refined[l].trace[t][br]; }));
      result.step_logits.push_back(std::move(step));
    }
  }
  return result;
}

}  // namespace cycleseg
