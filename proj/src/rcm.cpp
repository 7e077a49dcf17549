// SPDX-License-Identifier: Apache-2.0
#include "cycleseg/rcm.hpp"

#include <algorithm>
#include <numeric>

#include "cycleseg/errors.hpp"
#include "cycleseg/ops.hpp"

namespace cycleseg {

RCMParams init_rcm(std::size_t width, Rng& rng) {
  return {make_conv(width, width, 1, 1, 0, rng), make_conv(width, width, 1, 1, 0, rng),
          make_conv(width, 2 * width, 1, 1, 0, rng)};
}

RegionBank region_bank(std::span<const Tensor> sources, const RCMParams& params, RoiSize roi) {
  if (sources.empty()) throw EmptyGroup("region_bank: no source maps");
  const std::size_t channels = sources[0].rank() == 4 ? sources[0].dim(1) : 0;
  std::vector<Tensor> parts;
  std::size_t per_source = 0;
  for (const auto& src : sources) {
    if (src.rank() != 4 || src.dim(0) != 1 || src.dim(1) != channels)
      throw ShapeError("region_bank: source " + shape_str(src.shape()) + " does not match width " +
                       std::to_string(channels));
    Tensor avg = src, max = src;
    if (!roi.is_raw()) {
      avg = ops::pool(ops::Pool::roi_avg, src, roi.height, roi.width);
      max = ops::pool(ops::Pool::roi_max, src, roi.height, roi.width);
    }
    const Tensor pooled[] = {avg, max};
    Tensor fused = apply(params.fuse, ops::concat_channels(pooled));
    Tensor rows = ops::to_rows(fused);
    if (per_source != 0 && rows.dim(0) != per_source)
      throw ShapeError("region_bank: raw sources must share a spatial size");
    per_source = rows.dim(0);
    parts.push_back(std::move(rows));
  }
  return {parts.size() == 1 ? parts[0] : ops::concat_rows(parts), sources.size(), per_source};
}

Tensor affinity(const Tensor& target, const RegionBank& bank, const RCMParams& params) {
  if (target.rank() != 4 || target.dim(0) != 1) throw ShapeError("affinity: bad target " + shape_str(target.shape()));
  if (!bank.rows.defined() || bank.rows.dim(1) != target.dim(1))
    throw ShapeError("affinity: bank width does not match target " + shape_str(target.shape()));
  Tensor query = ops::to_rows(ops::relu(apply(params.project_target, target)));
  // Bank rows as a 1 x C x R x 1 map so the 1x1 conv projects each row.
  Tensor bank_map = ops::from_rows(bank.rows, bank.rows.dim(0), 1);
  Tensor keys = ops::to_rows(ops::relu(apply(params.project_source, bank_map)));
  return ops::matmul(query, ops::transpose(keys));
}

Tensor attend(const Tensor& target, const RegionBank& bank, const RCMParams& params) {
  Tensor weights = ops::softmax_rows(affinity(target, bank, params));
  return ops::from_rows(ops::matmul(weights, bank.rows), target.dim(2), target.dim(3));
}

Tensor global_term(std::span<const Tensor> sources, std::size_t height, std::size_t width) {
  if (sources.empty()) throw EmptyGroup("global_term: no source maps");
  Tensor pooled = ops::global_avg_pool(sources[0]);
  for (std::size_t i = 1; i < sources.size(); ++i) pooled = ops::add(pooled, ops::global_avg_pool(sources[i]));
  if (sources.size() > 1) pooled = ops::scale(pooled, 1.0 / static_cast<double>(sources.size()));
  return ops::upsample_bilinear(pooled, height, width);
}

Tensor rcm_forward(const Tensor& target, const RegionBank& bank, std::span<const Tensor> global_sources,
                   const RCMParams& params) {
  if (bank.sources == 0) throw EmptyGroup("rcm_forward: empty region bank");
  Tensor queried = attend(target, bank, params);
  Tensor global = global_term(global_sources, target.dim(2), target.dim(3));
  return ops::scale(ops::add(queried, global), 0.5);
}

Tensor rcm_group_forward(std::size_t target_index, std::span<const Tensor> cell_states, const RCMParams& params,
                         RoiSize roi) {
  if (cell_states.size() < 2)
    throw GroupTooSmall("rcm_group_forward: need at least two branches, got " + std::to_string(cell_states.size()));
  if (target_index >= cell_states.size()) throw ShapeError("rcm_group_forward: target index out of range");
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < cell_states.size(); ++i)
    if (i != target_index) others.push_back(i);
  std::stable_sort(others.begin(), others.end(), [&](std::size_t a, std::size_t b) {
    auto av = cell_states[a].values();
    auto bv = cell_states[b].values();
    return std::lexicographical_compare(av.begin(), av.end(), bv.begin(), bv.end());
  });
  std::vector<Tensor> sources;
  for (auto i : others) sources.push_back(cell_states[i]);
  RegionBank bank = region_bank(sources, params, roi);
  return rcm_forward(cell_states[target_index], bank, sources, params);
}

ExchangeKind parse_exchange(const std::string& name) {
  if (name == "rcm") return ExchangeKind::rcm;
  if (name == "M_cat" || name == "cat") return ExchangeKind::cat;
  if (name == "M_mul" || name == "mul") return ExchangeKind::mul;
  if (name == "none") return ExchangeKind::none;
  throw InvalidConfig("unknown exchange kind '" + name + "'");
}

std::string exchange_name(ExchangeKind kind) {
  switch (kind) {
    case ExchangeKind::rcm:
      return "rcm";
    case ExchangeKind::cat:
      return "M_cat";
    case ExchangeKind::mul:
      return "M_mul";
    case ExchangeKind::none:
      return "none";
  }
  return "?";
}

BaselineParams init_baseline(std::size_t width, Rng& rng) { return {make_conv(width, 2 * width, 1, 1, 0, rng)}; }

Tensor baseline_exchange(ExchangeKind kind, const Tensor& target, const Tensor& source, const BaselineParams& params) {
  if (target.rank() != 4 || source.rank() != 4 || target.dim(1) != source.dim(1))
    throw ShapeError("baseline_exchange: target " + shape_str(target.shape()) + " and source " +
                     shape_str(source.shape()) + " are incompatible");
  if (kind == ExchangeKind::none) return target;
  const Tensor global = ops::upsample_bilinear(ops::global_avg_pool(source), target.dim(2), target.dim(3));
  switch (kind) {
    case ExchangeKind::none:
      return target;
    case ExchangeKind::mul:
      return ops::mul(target, global);
    case ExchangeKind::cat: {
      const Tensor parts[] = {target, global};
      return apply(params.cat, ops::concat_channels(parts));
    }
    case ExchangeKind::rcm:
      break;
  }
  throw InvalidConfig("baseline_exchange: rcm is not a baseline");
}

}  // namespace cycleseg
