// SPDX-License-Identifier: Apache-2.0
#include "cycleseg/experiment.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "cycleseg/errors.hpp"
#include "cycleseg/loss.hpp"
#include "cycleseg/ops.hpp"

namespace cycleseg {

Tensor group_loss(std::span<const Tensor> logits, std::span<const Mask> gt, LossKind kind) {
  if (logits.size() != gt.size() || logits.empty()) throw ShapeError("group_loss: one mask per logit map required");
  Tensor total;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    Tensor term = kind == LossKind::lovasz ? lovasz_softmax(logits[i], gt[i]) : cross_entropy(logits[i], gt[i]);
    total = total.defined() ? ops::add(total, term) : term;
  }
  return ops::scale(total, 1.0 / static_cast<double>(logits.size()));
}

TrainResult train_model(const ModelConfig& cfg, const TrainOptions& opts, std::span<const ImageGroup> train,
                        std::span<const ImageGroup> val, const std::function<void(const LogRow&)>& on_row) {
  cfg.validate();
  if (opts.iterations > 0 && train.empty()) throw InvalidConfig("no training groups");
  TrainResult result;
  result.params = init_model(cfg, opts.seed);
  AdamState adam{opts.adam, {}, {}, 0};
  std::mt19937_64 order(opts.seed ^ 0xA5A5A5A5DEADBEEFULL);
  std::uniform_int_distribution<std::size_t> pick(0, train.empty() ? 0 : train.size() - 1);

  for (std::size_t it = 0; it < opts.iterations; ++it) {
    const ImageGroup& g = train[pick(order)];
    if (g.images.size() < 2) throw GroupTooSmall("training group with fewer than two images");
    Tape tape;
    const ModelParams tracked = watch(result.params, tape);
    const std::vector<Tensor> pair{g.images[0], g.images[1]};
    const std::vector<Mask> masks{g.masks[0], g.masks[1]};
    const auto fwd = forward_full(pair, tracked, cfg);
    const Tensor loss = group_loss(fwd.logits, masks, opts.loss);
    tape.backward(loss);

    const auto leaves = flat_tensors(tracked);
    std::vector<Tensor> grads;
    grads.reserve(leaves.size());
    for (const auto& p : leaves) grads.push_back(tape.grad(p));
    const auto current = flat_tensors(result.params);
    result.params = with_flat_tensors(result.params, adam_step(current, grads, adam));

    LogRow row{it, loss.item(), std::nullopt};
    const bool last = it + 1 == opts.iterations;
    if (opts.val_every > 0 && !val.empty() && ((it + 1) % opts.val_every == 0 || last))
      row.val_jaccard = evaluate_pairs(result.params, cfg, val).mean().jaccard;
    result.log.push_back(row);
    if (on_row) on_row(row);
  }
  return result;
}

std::string log_csv_header() { return "iteration,loss,val_jaccard\n"; }

std::string log_csv_row(const LogRow& row) {
  std::ostringstream os;
  os.precision(17);
  os << row.iteration << ',' << row.loss << ',';
  if (row.val_jaccard) os << *row.val_jaccard;
  os << '\n';
  return os.str();
}

std::vector<double> foreground_probability(const Tensor& logits) {
  if (logits.rank() != 4 || logits.dim(0) != 1 || logits.dim(1) != 2)
    throw ShapeError("expected 1 x 2 x H x W logits, got " + shape_str(logits.shape()));
  const std::size_t plane = logits.dim(2) * logits.dim(3);
  auto v = logits.values();
  std::vector<double> p(plane);
  // softmax over two classes = logistic of the logit difference
  for (std::size_t i = 0; i < plane; ++i) p[i] = 1.0 / (1.0 + std::exp(v[i] - v[plane + i]));
  return p;
}

Mask predict_mask(const Tensor& logits) {
  return threshold(foreground_probability(logits), logits.dim(2), logits.dim(3));
}

namespace {

Metrics mean_of(const std::vector<Metrics>& ms) {
  Metrics m;
  if (ms.empty()) return m;
  for (const auto& x : ms) {
    m.precision += x.precision;
    m.jaccard += x.jaccard;
  }
  m.precision /= static_cast<double>(ms.size());
  m.jaccard /= static_cast<double>(ms.size());
  return m;
}

template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex m;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) f(i);
      } catch (...) {
        std::lock_guard lock(m);
        if (!failure) failure = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

Metrics EvalResult::mean() const { return mean_of(final_metrics); }

Metrics EvalResult::step_mean(std::size_t t) const {
  if (t >= per_step.size()) throw InvalidConfig("no per-step metrics for step " + std::to_string(t + 1));
  return mean_of(per_step[t]);
}

EvalResult evaluate_pairs(const ModelParams& params, const ModelConfig& cfg, std::span<const ImageGroup> groups,
                          bool per_step, std::size_t threads) {
  const std::size_t n = groups.size();
  const std::size_t steps = per_step ? cfg.crm.steps : 0;
  std::vector<std::array<Metrics, 2>> fm(n);
  std::vector<std::array<Mask, 2>> masks(n);
  std::vector<std::vector<std::array<Metrics, 2>>> sm(steps, std::vector<std::array<Metrics, 2>>(n));
  std::vector<std::vector<std::array<Mask, 2>>> smasks(steps, std::vector<std::array<Mask, 2>>(n));

  parallel_for(n, threads, [&](std::size_t g) {
    const auto& grp = groups[g];
    if (grp.images.size() < 2) throw GroupTooSmall("evaluation group with fewer than two images");
    const std::vector<Tensor> pair{grp.images[0], grp.images[1]};
    const auto fwd = forward_full(pair, params, cfg, per_step);
    for (std::size_t b = 0; b < 2; ++b) {
      masks[g][b] = predict_mask(fwd.logits[b]);
      fm[g][b] = metrics(masks[g][b], grp.masks[b]);
      for (std::size_t t = 0; t < steps; ++t) {
        smasks[t][g][b] = predict_mask(fwd.step_logits[t][b]);
        sm[t][g][b] = metrics(smasks[t][g][b], grp.masks[b]);
      }
    }
  });

  EvalResult r;
  for (std::size_t g = 0; g < n; ++g)
    for (std::size_t b = 0; b < 2; ++b) {
      r.final_metrics.push_back(fm[g][b]);
      r.final_masks.push_back(std::move(masks[g][b]));
    }
  r.per_step.resize(steps);
  r.per_step_masks.resize(steps);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t g = 0; g < n; ++g)
      for (std::size_t b = 0; b < 2; ++b) {
        r.per_step[t].push_back(sm[t][g][b]);
        r.per_step_masks[t].push_back(std::move(smasks[t][g][b]));
      }
  return r;
}

double time_forward(const ModelParams& params, const ModelConfig& cfg, std::span<const Tensor> images,
                    std::size_t repeats) {
  if (repeats == 0) throw InvalidConfig("time_forward needs at least one repeat");
  std::vector<double> secs;
  forward_full(images, params, cfg);  // warm-up
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto fwd = forward_full(images, params, cfg);
    const auto t1 = std::chrono::steady_clock::now();
    secs.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::nth_element(secs.begin(), secs.begin() + secs.size() / 2, secs.end());
  return secs[secs.size() / 2];
}

Predictor model_predictor(const ModelParams& params, const ModelConfig& cfg) {
  return [params, cfg](std::span<const Tensor> images) {
    const auto fwd = forward_full(images, params, cfg);
    std::vector<std::vector<double>> maps;
    for (const auto& l : fwd.logits) maps.push_back(foreground_probability(l));
    return maps;
  };
}

std::size_t default_threads() {
  std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("CYCLESEG_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return std::min<std::size_t>(v, hw);
  }
  return hw;
}

}  // namespace cycleseg
