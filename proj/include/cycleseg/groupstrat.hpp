// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cycleseg/mask.hpp"
#include "cycleseg/tensor.hpp"

namespace cycleseg {

/// a: every k-subset. b: one random partition. c: per target, five random
/// companion sets. d: per target, one random split of the others.
enum class Strategy { a, b, c, d };
enum class Remainder { last_group_absorbs, drop_remainder };

Strategy parse_strategy(const std::string& name);
std::string strategy_name(Strategy s);

struct StrategyConfig {
  Strategy strategy = Strategy::d;
  std::size_t group_size = 0;  // N
  std::size_t tuple_size = 2;  // k
  std::uint64_t seed = 0;
  /// Applies to b (default absorb) and d (default drop).
  std::optional<Remainder> remainder;
  std::size_t samples_per_target = 5;
  std::size_t combination_cap = 10000;

  Remainder effective_remainder() const;
  void validate() const;
};

struct Tuple {
  std::vector<std::size_t> members;
  /// For c and d, the image whose prediction this tuple contributes (always
  /// members[0]); for a and b every member's prediction counts.
  std::optional<std::size_t> target;
};

std::vector<Tuple> plan(const StrategyConfig& cfg);

/// Number of k-subsets of an n-set; saturates at SIZE_MAX.
std::size_t binomial(std::size_t n, std::size_t k);

/// Per-image running sum of foreground probability maps.
class FusionAccumulator {
 public:
  FusionAccumulator(std::size_t images, std::size_t height, std::size_t width);

  void add(std::size_t image, std::span<const double> probability);
  /// Order-independent merge of another accumulator over the same images.
  void merge(const FusionAccumulator& other);
  std::size_t count(std::size_t image) const { return counts_[image]; }
  /// sum / count per image; throws MissingPrediction if any count is zero.
  std::vector<std::vector<double>> finalize() const;

 private:
  std::size_t height_, width_;
  std::vector<std::vector<double>> sums_;
  std::vector<std::size_t> counts_;
};

Mask threshold(std::span<const double> probability, std::size_t height, std::size_t width, double cut = 0.5);

struct Metrics {
  double precision = 0.0;
  double jaccard = 0.0;
};

Metrics metrics(const Mask& pred, const Mask& gt);

/// Foreground probability maps (H*W values each) for the images of a tuple,
/// in the order given.
using Predictor = std::function<std::vector<std::vector<double>>(std::span<const Tensor>)>;

struct GroupResult {
  std::vector<std::vector<double>> probability;
  std::vector<Mask> masks;
  std::vector<Metrics> metrics;
  std::size_t tuples = 0;
};

/// Runs plan(cfg) through `predict` on up to `threads` workers, fuses by
/// averaging, thresholds at 0.5 and scores against `gt`.
GroupResult run_group_segmentation(std::span<const Tensor> images, std::span<const Mask> gt,
                                   const Predictor& predict, const StrategyConfig& cfg, std::size_t threads = 1);

}  // namespace cycleseg
