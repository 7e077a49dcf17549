// SPDX-License-Identifier: Apache-2.0
#include "cycleseg/adam.hpp"

#include <cmath>

#include "cycleseg/errors.hpp"

namespace cycleseg {

std::vector<Tensor> adam_step(std::span<const Tensor> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size())
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params but " + std::to_string(grads.size()) +
                     " gradients");
  if (state.step == 0) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape())
      throw ShapeError("adam_step: gradient shape " + shape_str(grads[i].shape()) + " for parameter " +
                       shape_str(params[i].shape()));
    if (state.first_moment[i].size() != params[i].numel()) throw ShapeError("adam_step: parameter shape changed");
  }

  const auto& cfg = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  std::vector<Tensor> updated;
  updated.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto pv = params[i].values();
    auto gv = grads[i].values();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    std::vector<double> out(pv.size());
    for (std::size_t j = 0; j < pv.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gv[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gv[j] * gv[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      out[j] = pv[j] - cfg.learning_rate * (mhat / (std::sqrt(vhat) + cfg.epsilon) + cfg.weight_decay * pv[j]);
    }
    updated.emplace_back(params[i].shape(), std::move(out));
  }
  return updated;
}

}  // namespace cycleseg
