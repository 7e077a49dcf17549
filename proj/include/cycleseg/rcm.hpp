// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cycleseg/layers.hpp"
#include "cycleseg/tensor.hpp"

namespace cycleseg {

/// ROI grid size. {0, 0} selects raw mode: every source pixel is a region.
struct RoiSize {
  std::size_t height = 2;
  std::size_t width = 2;

  static RoiSize raw() { return {0, 0}; }
  bool is_raw() const { return height == 0 && width == 0; }
};

/// W^A / W^B: 1x1 convs (followed by ReLU) into the affinity space.
/// fuse: 1x1 conv merging the ROI average and ROI max grids.
struct RCMParams {
  ConvLayer project_target;
  ConvLayer project_source;
  ConvLayer fuse;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    project_target.visit(prefix + ".project_target", f);
    project_source.visit(prefix + ".project_source", f);
    fuse.visit(prefix + ".fuse", f);
  }
};

RCMParams init_rcm(std::size_t width, Rng& rng);

/// Regional representations of one or more source maps, flattened to rows
/// (one per region, columns = channels) and concatenated in source order.
struct RegionBank {
  Tensor rows;
  std::size_t sources = 0;
  std::size_t rows_per_source = 0;
};

RegionBank region_bank(std::span<const Tensor> sources, const RCMParams& params, RoiSize roi);

/// S = relu(W^A(target)) relu(W^B(bank))^T, shape (H*W) x bank rows.
Tensor affinity(const Tensor& target, const RegionBank& bank, const RCMParams& params);

/// softmax_rows(S) * bank rows, reshaped to the target layout.
Tensor attend(const Tensor& target, const RegionBank& bank, const RCMParams& params);

/// Global average pool of each source, averaged across sources and
/// broadcast to height x width.
Tensor global_term(std::span<const Tensor> sources, std::size_t height, std::size_t width);

/// (attend(target, bank) + global_term(global_sources)) / 2.
Tensor rcm_forward(const Tensor& target, const RegionBank& bank, std::span<const Tensor> global_sources,
                   const RCMParams& params);

/// Exchange for branch `target_index`: all other branches form one virtual
/// source. They are visited in a canonical content order, so the result does
/// not depend on how the other branches are arranged.
Tensor rcm_group_forward(std::size_t target_index, std::span<const Tensor> cell_states, const RCMParams& params,
                         RoiSize roi);

enum class ExchangeKind { rcm, cat, mul, none };

ExchangeKind parse_exchange(const std::string& name);
std::string exchange_name(ExchangeKind kind);

/// M_cat projection: 1x1 conv from (target || broadcast global) back to width.
struct BaselineParams {
  ConvLayer cat;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    cat.visit(prefix + ".cat", f);
  }
};

BaselineParams init_baseline(std::size_t width, Rng& rng);

/// Global-vector baselines: cat fuses by concatenation + 1x1 conv, mul by
/// Hadamard product, none passes the target through. `kind` must not be rcm.
Tensor baseline_exchange(ExchangeKind kind, const Tensor& target, const Tensor& source, const BaselineParams& params);

}  // namespace cycleseg
