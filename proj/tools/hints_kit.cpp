// hints-kit: dataset generation, training, fine-tuning and benchmarking.
//
//   hints-kit datagen  --config configs/darcy.yaml --out data/darcy_train.bin
//   hints-kit train    --config configs/darcy.yaml
//   hints-kit solve    --method hints --sample 3 --config configs/darcy.yaml
//   hints-kit bench    --config configs/darcy.yaml --jobs 4
//
// Exit codes: 0 ok, 2 configuration or usage error, 3 numerical failure,
// 4 I/O error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "hints/error.hpp"
#include "hints/harness.hpp"

namespace {

using namespace hints;

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

struct Common {
  std::string config;
  std::string problem;
  std::string geometry;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<int> mesh_n;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "YAML experiment config");
  cmd->add_option("--problem", c.problem, "darcy or elasticity");
  cmd->add_option("--geometry", c.geometry, "lshape, lshape-circle, lshape-triangle, square, square-circle");
  cmd->add_option("--seed", c.seed, "global seed");
  cmd->add_option("--jobs", c.jobs, "worker threads");
  cmd->add_option("--mesh-n", c.mesh_n, "cells per unit side");
  cmd->add_option("--out", c.out, "output path (solve: file prefix)");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config.empty()) {
    cfg = load_config(c.config);
    if (!c.problem.empty()) cfg.problem = problem_from_string(c.problem);
  } else {
    cfg = default_config(c.problem.empty() ? ProblemKind::Darcy : problem_from_string(c.problem));
  }
  if (!c.geometry.empty()) cfg.geometry = geometry_from_string(c.geometry);
  if (c.seed) cfg.seed = *c.seed;
  if (c.jobs) cfg.jobs = *c.jobs;
  if (c.mesh_n) cfg.mesh_n = *c.mesh_n;
  return cfg;
}

void set_if(std::string& dst, const std::string& src) {
  if (!src.empty()) dst = src;
}

int fail(int code, const char* kind, const std::exception& e) {
  std::fprintf(stderr, "hints-kit: %s: %s\n", kind, e.what());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid GS / DeepONet solver toolkit"};
  app.require_subcommand(1);
  Common common;

  auto* datagen = app.add_subcommand("datagen", "generate a labelled dataset");
  add_common(datagen, common);
  std::optional<int> n_samples;
  datagen->add_option("--samples", n_samples, "number of samples");

  auto* train_cmd = app.add_subcommand("train", "train the source DeepONet");
  add_common(train_cmd, common);
  std::string dataset, test_dataset, resume;
  std::optional<int> epochs;
  train_cmd->add_option("--dataset", dataset, "training dataset");
  train_cmd->add_option("--test-dataset", test_dataset, "test dataset");
  train_cmd->add_option("--resume", resume, "checkpoint to continue from");
  train_cmd->add_option("--epochs", epochs, "total epochs");

  auto* finetune = app.add_subcommand("finetune", "fine-tune a source checkpoint on a target geometry");
  add_common(finetune, common);
  std::string source_ckpt, source_dataset;
  std::optional<int> iterations;
  std::optional<double> lambda2;
  finetune->add_option("--checkpoint", source_ckpt, "source checkpoint");
  finetune->add_option("--dataset", dataset, "target dataset");
  finetune->add_option("--source-dataset", source_dataset, "source dataset for the CEOD term");
  finetune->add_option("--test-dataset", test_dataset, "target test dataset");
  finetune->add_option("--iterations", iterations, "fine-tuning iterations");
  finetune->add_option("--lambda2", lambda2, "CEOD weight (0 disables)");

  auto* solve = app.add_subcommand("solve", "one solve with trace export");
  add_common(solve, common);
  std::string method_name = "gs";
  int sample = 0;
  bool debug = false;
  std::string checkpoint, tl_checkpoint;
  solve->add_option("--method", method_name, "gs, hints, hints-tl or direct");
  solve->add_option("--sample", sample, "bench case index");
  solve->add_flag("--debug", debug, "use the 2x2 debug system");
  solve->add_option("--checkpoint", checkpoint, "source checkpoint");
  solve->add_option("--tl-checkpoint", tl_checkpoint, "fine-tuned checkpoint");

  auto* bench = app.add_subcommand("bench", "iteration counts of several methods on the same systems");
  add_common(bench, common);
  std::vector<std::string> methods;
  std::optional<int> cases;
  std::string trace_dir;
  bench->add_option("--method", methods, "methods to compare (repeatable, or comma separated)")->delimiter(',');
  bench->add_option("--cases", cases, "number of systems");
  bench->add_option("--checkpoint", checkpoint, "source checkpoint");
  bench->add_option("--tl-checkpoint", tl_checkpoint, "fine-tuned checkpoint");
  bench->add_option("--trace-dir", trace_dir, "write one trace CSV per solve here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    ExperimentConfig cfg = resolve(common);
    if (datagen->parsed()) {
      if (n_samples) cfg.datagen.n_samples = *n_samples;
      set_if(cfg.datagen.out, common.out);
      const DatagenSummary s = run_datagen(cfg);
      std::printf("wrote %d samples to %s (mesh %s) in %.1f s\n", s.n_samples, s.dataset_path.c_str(),
                  s.mesh_path.c_str(), s.seconds);
    } else if (train_cmd->parsed()) {
      set_if(cfg.train.dataset, dataset);
      set_if(cfg.train.test_dataset, test_dataset);
      set_if(cfg.train.resume, resume);
      set_if(cfg.train.out, common.out);
      if (epochs) cfg.train.config.epochs = *epochs;
      const int every = cfg.train.config.eval_interval;
      const TrainSummary s = run_train(cfg, [every](int epoch, double loss, std::optional<double> test) {
        if (test) {
          std::printf("epoch %5d  loss %.5f  test %.5f\n", epoch, loss, *test);
        } else if (epoch % every == 0) {
          std::printf("epoch %5d  loss %.5f\n", epoch, loss);
        }
        std::fflush(stdout);
      });
      std::printf("best test error %.5f at epoch %d; wrote %s in %.1f s\n", s.best_test_error, s.best_epoch,
                  s.checkpoint_path.c_str(), s.seconds);
    } else if (finetune->parsed()) {
      auto& f = cfg.finetune;
      set_if(f.source_checkpoint, source_ckpt);
      set_if(f.target_dataset, dataset);
      set_if(f.source_dataset, source_dataset);
      set_if(f.test_dataset, test_dataset);
      set_if(f.out, common.out);
      if (iterations) f.config.iterations = *iterations;
      if (lambda2) f.config.lambda2 = *lambda2;
      const FinetuneSummary s = run_finetune(cfg);
      if (s.target_test_error >= 0.0) {
        std::printf("test error: source %.5f, fine-tuned %.5f\n", s.source_test_error, s.target_test_error);
      }
      std::printf("wrote %s in %.1f s", s.checkpoint_path.c_str(), s.seconds);
      if (s.train_seconds >= 0.0) {
        std::printf(" (source training took %.1f s; fine-tuning %s)", s.train_seconds,
                    s.seconds < s.train_seconds ? "faster" : "NOT faster");
      }
      std::printf("\n");
    } else if (solve->parsed()) {
      const Method method = method_from_string(method_name);
      set_if(cfg.bench.checkpoint, checkpoint);
      set_if(cfg.bench.tl_checkpoint, tl_checkpoint);
      const SolveSummary s = run_solve(cfg, method, sample, common.out, debug);
      const auto& last = s.trace.records.back();
      std::printf("%s: %d iterations, %s, final error %.3e; trace %s\n", std::string(to_string(method)).c_str(),
                  s.trace.iterations(), s.trace.converged_at ? "converged" : "NOT converged", last.error_norm,
                  s.trace_path.c_str());
    } else if (bench->parsed()) {
      if (!methods.empty()) {
        cfg.bench.methods.clear();
        for (const auto& m : methods) cfg.bench.methods.push_back(method_from_string(m));
      }
      if (cases) cfg.bench.n_cases = *cases;
      set_if(cfg.bench.checkpoint, checkpoint);
      set_if(cfg.bench.tl_checkpoint, tl_checkpoint);
      set_if(cfg.bench.trace_dir, trace_dir);
      set_if(cfg.bench.out, common.out);
      const BenchReport r = run_bench(cfg);
      std::cout << format_table(r);
      if (!cfg.bench.out.empty()) std::printf("report: %s\n", cfg.bench.out.c_str());
    }
  } catch (const ConfigError& e) {
    return fail(kExitConfig, "config error", e);
  } catch (const NumericalError& e) {
    return fail(kExitNumerical, "numerical failure", e);
  } catch (const IoError& e) {
    return fail(kExitIo, "I/O error", e);
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(kExitIo, "I/O error", e);
  }
  return 0;
}
