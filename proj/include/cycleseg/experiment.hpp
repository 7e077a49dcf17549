// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cycleseg/adam.hpp"
#include "cycleseg/crm.hpp"
#include "cycleseg/groupstrat.hpp"
#include "cycleseg/run_config.hpp"
#include "cycleseg/synthdata.hpp"

namespace cycleseg {

struct TrainOptions {
  AdamConfig adam{};
  std::size_t iterations = 2000;
  LossKind loss = LossKind::lovasz;
  std::uint64_t seed = 1;
  /// Validation Jaccard every `val_every` iterations (and after the last);
  /// 0 disables it.
  std::size_t val_every = 0;
};

struct LogRow {
  std::size_t iteration = 0;
  double loss = 0.0;
  std::optional<double> val_jaccard;
};

struct TrainResult {
  ModelParams params;
  std::vector<LogRow> log;
};

/// Mean loss of one forward pass over the images of `images`.
Tensor group_loss(std::span<const Tensor> logits, std::span<const Mask> gt, LossKind kind);

/// Batch of one pair per iteration, sampled uniformly from `train` (first two
/// images of each group). Deterministic in opts.seed.
TrainResult train_model(const ModelConfig& cfg, const TrainOptions& opts, std::span<const ImageGroup> train,
                        std::span<const ImageGroup> val, const std::function<void(const LogRow&)>& on_row = {});

std::string log_csv_header();
std::string log_csv_row(const LogRow& row);

/// Softmax foreground probability per pixel of 1 x 2 x H x W logits.
std::vector<double> foreground_probability(const Tensor& logits);
Mask predict_mask(const Tensor& logits);

struct EvalResult {
  /// One entry per image of every evaluated group, in order.
  std::vector<Metrics> final_metrics;
  std::vector<Mask> final_masks;
  /// per_step[t][i] when per-step evaluation is requested.
  std::vector<std::vector<Metrics>> per_step;
  std::vector<std::vector<Mask>> per_step_masks;

  Metrics mean() const;
  Metrics step_mean(std::size_t t) const;
};

/// Co-segments the first two images of every group.
EvalResult evaluate_pairs(const ModelParams& params, const ModelConfig& cfg, std::span<const ImageGroup> groups,
                          bool per_step = false, std::size_t threads = 1);

/// Median wall-clock seconds of one inference forward pass on `images`.
double time_forward(const ModelParams& params, const ModelConfig& cfg, std::span<const Tensor> images,
                    std::size_t repeats);

/// k-branch model as a groupstrat predictor.
Predictor model_predictor(const ModelParams& params, const ModelConfig& cfg);

/// Worker count from CYCLESEG_THREADS, capped by hardware concurrency.
std::size_t default_threads();

}  // namespace cycleseg
