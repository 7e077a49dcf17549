// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cycleseg/tensor.hpp"

namespace cycleseg {

struct GradcheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  /// Coordinates probed per input tensor; larger tensors are sampled.
  std::size_t max_coordinates = 48;
  std::uint64_t seed = 1;
};

struct GradcheckEntry {
  std::string component;
  std::size_t coordinates = 0;
  /// Worst over inputs of max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-6).
  double worst_rel_error = 0.0;
  /// Coordinates whose +-step window straddled a kink and needed a smaller step.
  std::size_t kink_fallbacks = 0;
  bool passed = false;
};

/// Function under test. Its outputs are reduced to a scalar with fixed random
/// weights so that every output element contributes.
using GradFn = std::function<std::vector<Tensor>(std::span<const Tensor>)>;

/// Tape gradient of `f` with respect to every input against central
/// differences. The nominal step is options.step; where it and a ten times
/// smaller step disagree the window holds a kink and the step keeps
/// shrinking (down to 1e-8) until two successive steps agree.
GradcheckEntry check_gradient(const std::string& component, const GradFn& f, const std::vector<Tensor>& inputs,
                              const GradcheckOptions& options);

enum class GradScope { ops, modules, full };
GradScope parse_grad_scope(const std::string& name);

/// Each scope includes the smaller ones.
std::vector<GradcheckEntry> run_gradcheck(GradScope scope, const GradcheckOptions& options);

}  // namespace cycleseg
