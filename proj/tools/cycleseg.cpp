// SPDX-License-Identifier: Apache-2.0
// cycleseg: train, evaluate and inspect the co-segmentation model.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "cycleseg/checkpoint.hpp"
#include "cycleseg/errors.hpp"
#include "cycleseg/experiment.hpp"
#include "cycleseg/gradcheck.hpp"
#include "cycleseg/image_io.hpp"
#include "cycleseg/run_config.hpp"

namespace fs = std::filesystem;
using namespace cycleseg;

namespace {

enum Exit { kOk = 0, kVerify = 1, kUsage = 2, kIo = 3 };

struct VerificationFailure : Error {
  using Error::Error;
};

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path.string());
  out << text;
  if (!out) throw IoError("error writing " + path.string());
}

fs::path prepare_output(const RunConfig& cfg) {
  const fs::path dir = cfg.output;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / "config.txt", cfg.to_text());
  return dir;
}

ModelParams load_model(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw InvalidConfig("checkpoint is required");
  ModelParams params = init_model(cfg.model(), 0);
  assign_named(params, load_checkpoint(cfg.checkpoint));
  return params;
}

std::vector<ImageGroup> test_pairs(const RunConfig& cfg) {
  if (!cfg.dataset.empty()) return load_dataset(cfg.dataset);
  return generate_groups(cfg.test_scene(), cfg.test_pairs, 2);
}

int cmd_train(const RunConfig& cfg) {
  const fs::path dir = prepare_output(cfg);
  const auto train = cfg.dataset.empty() ? generate_groups(cfg.train_scene(), cfg.train_groups, 2)
                                         : load_dataset(cfg.dataset);
  SceneSpec val_scene = cfg.train_scene();
  val_scene.seed ^= 0xC0FFEEULL;
  const auto val = generate_groups(val_scene, cfg.val_pairs, 2);

  TrainOptions opts;
  opts.adam = cfg.adam();
  opts.iterations = cfg.iterations;
  opts.loss = cfg.loss;
  opts.seed = cfg.seed;
  opts.val_every = cfg.val_every;
  std::ofstream log(dir / "train_log.csv");
  if (!log) throw IoError("cannot create " + (dir / "train_log.csv").string());
  log << log_csv_header();
  const auto result = train_model(cfg.model(), opts, train, val, [&](const LogRow& row) {
    log << log_csv_row(row) << std::flush;
    if (row.val_jaccard) std::cerr << "iteration " << row.iteration + 1 << " val J " << fixed(*row.val_jaccard) << '\n';
  });
  save_checkpoint(dir / "model.ckpt", named_tensors(result.params));
  std::cout << (dir / "model.ckpt").string() << '\n';
  return kOk;
}

int cmd_eval(const RunConfig& cfg) {
  const fs::path dir = prepare_output(cfg);
  const ModelParams params = load_model(cfg);
  const auto pairs = test_pairs(cfg);
  const auto r = evaluate_pairs(params, cfg.model(), pairs, cfg.per_step, default_threads());

  std::ostringstream csv;
  csv << "step,precision,jaccard\n";
  csv << "final," << fixed(r.mean().precision) << ',' << fixed(r.mean().jaccard) << '\n';
  write_text(dir / "eval.csv", csv.str());
  std::cout << csv.str();
  if (!cfg.per_step) return kOk;

  std::ostringstream steps;
  steps << "step,precision,jaccard\n";
  fs::create_directories(dir / "masks");
  for (std::size_t i = 0; i < r.final_masks.size(); ++i) {
    const std::string stem = "g" + std::to_string(i / 2) + "_" + std::to_string(i % 2);
    write_pgm(dir / "masks" / (stem + "_gt.pgm"), pairs[i / 2].masks[i % 2]);
    write_pgm(dir / "masks" / (stem + "_final.pgm"), r.final_masks[i]);
  }
  for (std::size_t t = 0; t < r.per_step.size(); ++t) {
    const auto m = r.step_mean(t);
    steps << t + 1 << ',' << fixed(m.precision) << ',' << fixed(m.jaccard) << '\n';
    for (std::size_t i = 0; i < r.per_step_masks[t].size(); ++i)
      write_pgm(dir / "masks" /
                    ("g" + std::to_string(i / 2) + "_" + std::to_string(i % 2) + "_step" + std::to_string(t + 1) +
                     ".pgm"),
                r.per_step_masks[t][i]);
  }
  write_text(dir / "eval_per_step.csv", steps.str());
  std::cout << steps.str();
  return kOk;
}

ImageGroup bench_group(const RunConfig& cfg, std::optional<ShapeKind> cls) {
  SceneSpec s = cfg.test_scene();
  if (cls) s.common_classes = {*cls};
  return generate(s, cfg.group_size);
}

GroupResult group_run(const ImageGroup& g, const ModelParams& params, const RunConfig& cfg, Strategy strategy,
                      std::size_t k) {
  ModelConfig mc = cfg.model();
  StrategyConfig sc;
  sc.strategy = strategy;
  sc.group_size = g.images.size();
  sc.tuple_size = k;
  sc.seed = cfg.seed;
  return run_group_segmentation(g.images, g.masks, model_predictor(params, mc), sc, default_threads());
}

int cmd_group_eval(const RunConfig& cfg) {
  const fs::path dir = prepare_output(cfg);
  const ModelParams params = load_model(cfg);
  const ImageGroup g = bench_group(cfg, std::nullopt);
  const auto r = group_run(g, params, cfg, cfg.strategy, cfg.k);
  std::ostringstream csv;
  csv << "image,precision,jaccard\n";
  double p = 0.0, j = 0.0;
  for (std::size_t i = 0; i < r.metrics.size(); ++i) {
    csv << i << ',' << fixed(r.metrics[i].precision) << ',' << fixed(r.metrics[i].jaccard) << '\n';
    p += r.metrics[i].precision;
    j += r.metrics[i].jaccard;
  }
  const double n = static_cast<double>(r.metrics.size());
  csv << "mean," << fixed(p / n) << ',' << fixed(j / n) << '\n';
  write_text(dir / "group_eval.csv", csv.str());
  std::cout << csv.str();
  return kOk;
}

int cmd_strategy_bench(const RunConfig& cfg) {
  const fs::path dir = prepare_output(cfg);
  const ModelParams params = load_model(cfg);
  std::ostringstream csv;
  csv << "strategy,k,class,precision,jaccard,wallclock_s\n";
  for (auto strategy : cfg.strategies)
    for (auto k : cfg.k_range)
      for (auto cls : ClassSplit{}.test) {
        const std::string head = strategy_name(strategy) + "," + std::to_string(k) + "," + shape_name(cls) + ",";
        if (strategy == Strategy::a && k > 3) {
          csv << head << "-,-,-\n";
          continue;
        }
        const ImageGroup g = bench_group(cfg, cls);
        const auto t0 = std::chrono::steady_clock::now();
        const auto r = group_run(g, params, cfg, strategy, k);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        double p = 0.0, j = 0.0;
        for (const auto& m : r.metrics) {
          p += m.precision;
          j += m.jaccard;
        }
        const double n = static_cast<double>(r.metrics.size());
        csv << head << fixed(p / n) << ',' << fixed(j / n) << ',' << fixed(secs) << '\n';
        std::cerr << head << fixed(j / n) << '\n';
      }
  write_text(dir / "strategy_bench.csv", csv.str());
  std::cout << csv.str();
  return kOk;
}

int cmd_gradcheck(const RunConfig& cfg, const std::string& scope) {
  const fs::path dir = prepare_output(cfg);
  GradcheckOptions opts;
  opts.seed = cfg.seed;
  const auto entries = run_gradcheck(parse_grad_scope(scope), opts);
  std::ostringstream report;
  bool ok = true;
  for (const auto& e : entries) {
    char line[160];
    std::snprintf(line, sizeof line, "%-26s %s  coords=%-5zu worst_rel_err=%.3e kinks=%zu\n", e.component.c_str(),
                  e.passed ? "ok  " : "FAIL", e.coordinates, e.worst_rel_error, e.kink_fallbacks);
    report << line;
    ok = ok && e.passed;
  }
  write_text(dir / "gradcheck.txt", report.str());
  std::cout << report.str();
  if (!ok) throw VerificationFailure("gradient check failed");
  return kOk;
}

int cmd_gen_data(const RunConfig& cfg) {
  const fs::path dir = prepare_output(cfg);
  save_dataset(dir / "train", generate_groups(cfg.train_scene(), cfg.train_groups, 2));
  save_dataset(dir / "test", generate_groups(cfg.test_scene(), cfg.test_pairs, 2));
  std::cout << (dir / "train" / "manifest.tsv").string() << '\n' << (dir / "test" / "manifest.tsv").string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cycleseg: co-segmentation with cycle refinement"};
  app.require_subcommand(1);
  std::string config_path;
  std::map<std::string, std::string> overrides;
  std::string scope = "full";

  const char* names[][2] = {{"train", "train a model and write model.ckpt + train_log.csv"},
                            {"eval", "evaluate a checkpoint on test pairs"},
                            {"group-eval", "group segmentation of one synthetic group"},
                            {"strategy-bench", "strategy x k table on held-out classes"},
                            {"gradcheck", "finite-difference gradient report"},
                            {"gen-data", "write the synthetic dataset as PPM/PGM + manifest"}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : names) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "key = value config file");
    for (const auto& key : RunConfig::keys())
      sub->add_option_function<std::string>(
          "--" + key, [&overrides, key](const std::string& v) { overrides[key] = v; }, "config key " + key);
    subs[name] = sub;
  }
  subs["gradcheck"]->add_option("--scope", scope, "ops, modules or full");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    cfg.validate();
    if (*subs["train"]) return cmd_train(cfg);
    if (*subs["eval"]) return cmd_eval(cfg);
    if (*subs["group-eval"]) return cmd_group_eval(cfg);
    if (*subs["strategy-bench"]) return cmd_strategy_bench(cfg);
    if (*subs["gradcheck"]) return cmd_gradcheck(cfg, scope);
    if (*subs["gen-data"]) return cmd_gen_data(cfg);
  } catch (const VerificationFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kVerify;
  } catch (const InvalidConfig& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kVerify;
  }
  return kUsage;
}
