// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cycleseg/adam.hpp"
#include "cycleseg/crm.hpp"
#include "cycleseg/groupstrat.hpp"
#include "cycleseg/loss.hpp"
#include "cycleseg/synthdata.hpp"

namespace cycleseg {

/// Every tunable of a command. Text form: one `key = value` per line, `#`
/// starts a comment, unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 1;
  std::uint64_t data_seed = 7;
  std::size_t steps = 4;
  RoiSize roi{};
  ExchangeKind exchange = ExchangeKind::rcm;
  std::size_t levels = 3;
  std::size_t lstm_width = 16;
  std::vector<std::size_t> channels{8, 16, 32};
  bool standard_lstm_candidate = false;
  std::size_t k = 2;
  Strategy strategy = Strategy::d;
  std::vector<Strategy> strategies{Strategy::a, Strategy::b, Strategy::c, Strategy::d};
  std::vector<std::size_t> k_range{2, 3, 4, 5};
  double lr = 1e-3;
  double weight_decay = 5e-4;
  std::size_t iterations = 2000;
  LossKind loss = LossKind::lovasz;
  std::size_t val_every = 100;
  std::size_t val_pairs = 20;
  std::size_t train_groups = 500;
  std::size_t test_pairs = 100;
  std::size_t group_size = 40;
  std::size_t canvas = 64;
  std::size_t max_distractors = 2;
  double noise = 0.04;
  double color_jitter = 0.08;
  bool per_step = false;
  std::string checkpoint;
  std::string dataset;  // manifest path; empty means generate from data_seed
  std::string output = "run";

  /// Throws InvalidConfig for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  /// Applies `key = value` lines on top of the current values.
  void merge_text(const std::string& text);
  std::string to_text() const;

  ModelConfig model() const;
  AdamConfig adam() const;
  SceneSpec train_scene() const;
  SceneSpec test_scene() const;
  void validate() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace cycleseg
