// SPDX-License-Identifier: Apache-2.0
#include "cycleseg/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cycleseg/errors.hpp"

namespace cycleseg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) throw InvalidConfig("bad value '" + value + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw InvalidConfig("bad boolean '" + value + "' for " + key);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <class T, class F>
std::string join(const std::vector<T>& v, F&& f) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + f(v[i]);
  return s;
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = {
      "seed",        "data_seed",     "steps",        "roi",        "exchange",   "levels",
      "lstm_width",  "channels",      "standard_lstm_candidate",    "k",          "strategy",
      "strategies",  "k_range",       "lr",           "weight_decay",           "iterations",
      "loss",        "val_every",     "val_pairs",    "train_groups",           "test_pairs",
      "group_size",  "canvas",        "max_distractors",            "noise",      "color_jitter",
      "per_step",    "checkpoint",    "dataset",      "output"};
  return k;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  using u64 = std::uint64_t;
  using sz = std::size_t;
  if (key == "seed") seed = parse_number<u64>(key, value);
  else if (key == "data_seed") data_seed = parse_number<u64>(key, value);
  else if (key == "steps") steps = parse_number<sz>(key, value);
  else if (key == "roi") {
    if (value == "raw") {
      roi = RoiSize::raw();
    } else {
      const auto parts = split(value, 'x');
      if (parts.size() != 2) throw InvalidConfig("roi must be HxW or raw, got '" + value + "'");
      roi = {parse_number<sz>(key, parts[0]), parse_number<sz>(key, parts[1])};
    }
  } else if (key == "exchange") exchange = parse_exchange(value);
  else if (key == "levels") levels = parse_number<sz>(key, value);
  else if (key == "lstm_width") lstm_width = parse_number<sz>(key, value);
  else if (key == "channels") {
    channels.clear();
    for (const auto& p : split(value, ',')) channels.push_back(parse_number<sz>(key, p));
  } else if (key == "standard_lstm_candidate") standard_lstm_candidate = parse_bool(key, value);
  else if (key == "k") k = parse_number<sz>(key, value);
  else if (key == "strategy") strategy = parse_strategy(value);
  else if (key == "strategies") {
    strategies.clear();
    for (const auto& p : split(value, ',')) strategies.push_back(parse_strategy(p));
  } else if (key == "k_range") {
    k_range.clear();
    for (const auto& p : split(value, ',')) k_range.push_back(parse_number<sz>(key, p));
  } else if (key == "lr") lr = parse_number<double>(key, value);
  else if (key == "weight_decay") weight_decay = parse_number<double>(key, value);
  else if (key == "iterations") iterations = parse_number<sz>(key, value);
  else if (key == "loss") {
    if (value == "lovasz") loss = LossKind::lovasz;
    else if (value == "cross_entropy") loss = LossKind::cross_entropy;
    else throw InvalidConfig("loss must be lovasz or cross_entropy, got '" + value + "'");
  } else if (key == "val_every") val_every = parse_number<sz>(key, value);
  else if (key == "val_pairs") val_pairs = parse_number<sz>(key, value);
  else if (key == "train_groups") train_groups = parse_number<sz>(key, value);
  else if (key == "test_pairs") test_pairs = parse_number<sz>(key, value);
  else if (key == "group_size") group_size = parse_number<sz>(key, value);
  else if (key == "canvas") canvas = parse_number<sz>(key, value);
  else if (key == "max_distractors") max_distractors = parse_number<sz>(key, value);
  else if (key == "noise") noise = parse_number<double>(key, value);
  else if (key == "color_jitter") color_jitter = parse_number<double>(key, value);
  else if (key == "per_step") per_step = parse_bool(key, value);
  else if (key == "checkpoint") checkpoint = value;
  else if (key == "dataset") dataset = value;
  else if (key == "output") output = value;
  else throw InvalidConfig("unknown config key '" + key + "'");
}

std::string RunConfig::get(const std::string& key) const {
  auto num = [](auto v) { return std::to_string(v); };
  if (key == "seed") return num(seed);
  if (key == "data_seed") return num(data_seed);
  if (key == "steps") return num(steps);
  if (key == "roi") return roi.is_raw() ? "raw" : num(roi.height) + "x" + num(roi.width);
  if (key == "exchange") return exchange_name(exchange);
  if (key == "levels") return num(levels);
  if (key == "lstm_width") return num(lstm_width);
  if (key == "channels") return join(channels, num);
  if (key == "standard_lstm_candidate") return standard_lstm_candidate ? "true" : "false";
  if (key == "k") return num(k);
  if (key == "strategy") return strategy_name(strategy);
  if (key == "strategies") return join(strategies, strategy_name);
  if (key == "k_range") return join(k_range, num);
  if (key == "lr") return fmt(lr);
  if (key == "weight_decay") return fmt(weight_decay);
  if (key == "iterations") return num(iterations);
  if (key == "loss") return loss == LossKind::lovasz ? "lovasz" : "cross_entropy";
  if (key == "val_every") return num(val_every);
  if (key == "val_pairs") return num(val_pairs);
  if (key == "train_groups") return num(train_groups);
  if (key == "test_pairs") return num(test_pairs);
  if (key == "group_size") return num(group_size);
  if (key == "canvas") return num(canvas);
  if (key == "max_distractors") return num(max_distractors);
  if (key == "noise") return fmt(noise);
  if (key == "color_jitter") return fmt(color_jitter);
  if (key == "per_step") return per_step ? "true" : "false";
  if (key == "checkpoint") return checkpoint;
  if (key == "dataset") return dataset;
  if (key == "output") return output;
  throw InvalidConfig("unknown config key '" + key + "'");
}

void RunConfig::merge_text(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidConfig("line " + std::to_string(lineno) + ": expected key = value");
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& k : keys()) out += k + " = " + get(k) + "\n";
  return out;
}

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.encoder.channels = channels;
  m.levels = levels;
  m.lstm_width = lstm_width;
  m.crm.steps = steps;
  m.crm.exchange = exchange;
  m.crm.roi = roi;
  m.crm.standard_lstm_candidate = standard_lstm_candidate;
  return m;
}

AdamConfig RunConfig::adam() const {
  AdamConfig a;
  a.learning_rate = lr;
  a.weight_decay = weight_decay;
  return a;
}

SceneSpec RunConfig::train_scene() const {
  SceneSpec s = cycleseg::train_scene(ClassSplit{}, data_seed);
  s.height = s.width = canvas;
  s.max_distractors = max_distractors;
  s.noise = noise;
  s.color_jitter = color_jitter;
  return s;
}

SceneSpec RunConfig::test_scene() const {
  // Distinct stream from the training data even when the seeds coincide.
  SceneSpec s = cycleseg::test_scene(ClassSplit{}, data_seed ^ 0x5DEECE66DULL);
  s.height = s.width = canvas;
  s.max_distractors = max_distractors;
  s.noise = noise;
  s.color_jitter = color_jitter;
  return s;
}

void RunConfig::validate() const {
  model().validate();
  if (lr <= 0.0) throw InvalidConfig("lr must be positive");
  if (weight_decay < 0.0) throw InvalidConfig("weight_decay must be non-negative");
  if (k < 2) throw InvalidConfig("k must be at least 2");
  if (k_range.empty()) throw InvalidConfig("k_range is empty");
  if (strategies.empty()) throw InvalidConfig("strategies is empty");
  train_scene().validate();
  const std::size_t scale = std::size_t{1} << channels.size();
  if (canvas % scale != 0)
    throw InvalidConfig("canvas " + std::to_string(canvas) + " is not divisible by " + std::to_string(scale));
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  cfg.merge_text(ss.str());
  return cfg;
}

}  // namespace cycleseg
