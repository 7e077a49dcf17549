// SPDX-License-Identifier: Apache-2.0
#include "cycleseg/groupstrat.hpp"

#include <algorithm>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "cycleseg/errors.hpp"

namespace cycleseg {

Strategy parse_strategy(const std::string& name) {
  if (name == "a") return Strategy::a;
  if (name == "b") return Strategy::b;
  if (name == "c") return Strategy::c;
  if (name == "d") return Strategy::d;
  throw InvalidConfig("unknown strategy '" + name + "' (expected a, b, c or d)");
}

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::a: return "a";
    case Strategy::b: return "b";
    case Strategy::c: return "c";
    case Strategy::d: return "d";
  }
  return "?";
}

Remainder StrategyConfig::effective_remainder() const {
  if (remainder) return *remainder;
  return strategy == Strategy::b ? Remainder::last_group_absorbs : Remainder::drop_remainder;
}

void StrategyConfig::validate() const {
  if (tuple_size < 2) throw InvalidConfig("tuple size k must be at least 2");
  if (tuple_size > group_size)
    throw InvalidConfig("tuple size k=" + std::to_string(tuple_size) + " exceeds group size N=" +
                        std::to_string(group_size));
  if (strategy == Strategy::c && samples_per_target == 0) throw InvalidConfig("samples_per_target must be positive");
  if (strategy == Strategy::a && binomial(group_size, tuple_size) > combination_cap)
    throw CombinatorialBlowup("strategy a with N=" + std::to_string(group_size) + ", k=" + std::to_string(tuple_size) +
                              " exceeds the cap of " + std::to_string(combination_cap) + " tuples");
}

std::size_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  // Multiplicative form; each partial result is itself a binomial coefficient.
  std::size_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    const std::size_t g = std::gcd(r, i);
    std::size_t scaled;
    if (__builtin_mul_overflow(r / g, (n - k + i) / (i / g), &scaled)) return std::numeric_limits<std::size_t>::max();
    r = scaled;
  }
  return r;
}

namespace {

std::vector<Tuple> plan_all(std::size_t n, std::size_t k) {
  std::vector<Tuple> out;
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  while (true) {
    out.push_back({idx, std::nullopt});
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
    if (i == 0) break;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
  return out;
}

std::vector<std::size_t> others(std::size_t n, std::size_t target) {
  std::vector<std::size_t> v;
  v.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i)
    if (i != target) v.push_back(i);
  return v;
}

}  // namespace

std::vector<Tuple> plan(const StrategyConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.group_size, k = cfg.tuple_size;
  std::mt19937_64 rng(cfg.seed);
  std::vector<Tuple> out;
  switch (cfg.strategy) {
    case Strategy::a:
      return plan_all(n, k);
    case Strategy::b: {
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      const std::size_t groups = n / k;
      for (std::size_t g = 0; g < groups; ++g) out.push_back({{perm.begin() + g * k, perm.begin() + (g + 1) * k}, {}});
      if (cfg.effective_remainder() == Remainder::last_group_absorbs)
        out.back().members.insert(out.back().members.end(), perm.begin() + groups * k, perm.end());
      return out;
    }
    case Strategy::c:
      for (std::size_t t = 0; t < n; ++t) {
        auto rest = others(n, t);
        for (std::size_t s = 0; s < cfg.samples_per_target; ++s) {
          std::vector<std::size_t> pick;
          std::sample(rest.begin(), rest.end(), std::back_inserter(pick), k - 1, rng);
          std::shuffle(pick.begin(), pick.end(), rng);
          pick.insert(pick.begin(), t);
          out.push_back({std::move(pick), t});
        }
      }
      return out;
    case Strategy::d:
      for (std::size_t t = 0; t < n; ++t) {
        auto rest = others(n, t);
        std::shuffle(rest.begin(), rest.end(), rng);
        const std::size_t chunks = (n - 1) / (k - 1);
        for (std::size_t c = 0; c < chunks; ++c) {
          std::vector<std::size_t> members{t};
          members.insert(members.end(), rest.begin() + c * (k - 1), rest.begin() + (c + 1) * (k - 1));
          if (c + 1 == chunks && cfg.effective_remainder() == Remainder::last_group_absorbs)
            members.insert(members.end(), rest.begin() + chunks * (k - 1), rest.end());
          out.push_back({std::move(members), t});
        }
      }
      return out;
  }
  return out;
}

FusionAccumulator::FusionAccumulator(std::size_t images, std::size_t height, std::size_t width)
    : height_(height), width_(width), sums_(images, std::vector<double>(height * width, 0.0)), counts_(images, 0) {}

void FusionAccumulator::add(std::size_t image, std::span<const double> probability) {
  if (image >= sums_.size()) throw ShapeError("fusion: image index out of range");
  if (probability.size() != height_ * width_) throw ShapeError("fusion: probability map has the wrong size");
  auto& s = sums_[image];
  for (std::size_t i = 0; i < s.size(); ++i) s[i] += probability[i];
  ++counts_[image];
}

void FusionAccumulator::merge(const FusionAccumulator& other) {
  if (other.sums_.size() != sums_.size() || other.height_ != height_ || other.width_ != width_)
    throw ShapeError("fusion: merging accumulators of different shape");
  for (std::size_t i = 0; i < sums_.size(); ++i) {
    for (std::size_t p = 0; p < sums_[i].size(); ++p) sums_[i][p] += other.sums_[i][p];
    counts_[i] += other.counts_[i];
  }
}

std::vector<std::vector<double>> FusionAccumulator::finalize() const {
  std::vector<std::vector<double>> out(sums_.size());
  for (std::size_t i = 0; i < sums_.size(); ++i) {
    if (counts_[i] == 0) throw MissingPrediction("image " + std::to_string(i) + " received no prediction");
    out[i] = sums_[i];
    for (auto& v : out[i]) v /= static_cast<double>(counts_[i]);
  }
  return out;
}

Mask threshold(std::span<const double> probability, std::size_t height, std::size_t width, double cut) {
  if (probability.size() != height * width) throw ShapeError("threshold: map size differs from height*width");
  Mask m(height, width);
  for (std::size_t i = 0; i < probability.size(); ++i) m.values[i] = probability[i] > cut ? 1 : 0;
  return m;
}

Metrics metrics(const Mask& pred, const Mask& gt) {
  if (pred.height != gt.height || pred.width != gt.width || pred.size() != gt.size())
    throw ShapeError("metrics: prediction and ground truth differ in shape");
  if (gt.size() == 0) throw ShapeError("metrics: empty mask");
  std::size_t correct = 0, inter = 0, uni = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = pred.values[i] != 0, g = gt.values[i] != 0;
    correct += p == g;
    inter += p && g;
    uni += p || g;
  }
  Metrics m;
  m.precision = static_cast<double>(correct) / static_cast<double>(gt.size());
  m.jaccard = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  return m;
}

GroupResult run_group_segmentation(std::span<const Tensor> images, std::span<const Mask> gt,
                                   const Predictor& predict, const StrategyConfig& cfg, std::size_t threads) {
  if (images.size() != cfg.group_size) throw InvalidConfig("strategy group size differs from the number of images");
  if (gt.size() != images.size()) throw ShapeError("one ground-truth mask per image is required");
  if (images.empty()) throw EmptyGroup("no images");
  const std::size_t h = gt[0].height, w = gt[0].width;
  const auto tuples = plan(cfg);
  threads = std::max<std::size_t>(1, std::min(threads, tuples.size()));

  // One accumulator per worker, merged afterwards; per-worker sums are
  // deterministic because each worker takes a fixed stride of tuples.
  std::vector<FusionAccumulator> partial(threads, FusionAccumulator(images.size(), h, w));
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&](std::size_t worker) {
    try {
      for (std::size_t ti = worker; ti < tuples.size(); ti += threads) {
        const auto& tuple = tuples[ti];
        std::vector<Tensor> batch;
        for (auto m : tuple.members) batch.push_back(images[m]);
        const auto maps = predict(batch);
        if (maps.size() != batch.size()) throw ShapeError("predictor returned the wrong number of maps");
        for (std::size_t j = 0; j < tuple.members.size(); ++j)
          if (!tuple.target || tuple.members[j] == *tuple.target) partial[worker].add(tuple.members[j], maps[j]);
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  for (std::size_t t = 1; t < threads; ++t) partial[0].merge(partial[t]);

  GroupResult r;
  r.tuples = tuples.size();
  r.probability = partial[0].finalize();
  for (std::size_t i = 0; i < images.size(); ++i) {
    r.masks.push_back(threshold(r.probability[i], h, w));
    r.metrics.push_back(metrics(r.masks.back(), gt[i]));
  }
  return r;
}

}  // namespace cycleseg
