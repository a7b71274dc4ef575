#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hints/checkpoint.hpp"
#include "hints/dataset.hpp"
#include "hints/deeponet.hpp"
#include "hints/hints.hpp"
#include "hints/transfer.hpp"

namespace hints {

enum class Method { GS, Hints, HintsTL, Direct };
std::string_view to_string(Method m);
Method method_from_string(std::string_view name);

struct DatagenSection {
  int n_samples = 2000;
  std::string out;
};

struct TrainSection {
  std::string dataset;
  std::string test_dataset;
  std::string out;
  std::string resume;  // checkpoint to continue from
  TrainConfig config;
};

struct FinetuneSection {
  std::string source_checkpoint;
  std::string target_dataset;
  std::string source_dataset;
  std::string test_dataset;  // optional target-domain test set
  std::string out;
  int n_target_samples = 50;
  int n_source_samples = 500;
  FineTuneConfig config;
};

struct BenchSection {
  int n_cases = 20;
  std::vector<Method> methods{Method::GS, Method::Hints};
  std::string checkpoint;     // source model, used by `hints`
  std::string tl_checkpoint;  // fine-tuned model, used by `hints-tl`
  std::string out;            // report JSON
  std::string trace_dir;      // per-solve CSVs when set
};

/// Everything a command needs. Loaded from YAML (JSON is accepted, being a
/// YAML subset); command line flags override single fields afterwards.
struct ExperimentConfig {
  ProblemKind problem = ProblemKind::Darcy;
  GeometryTag geometry = GeometryTag::LShape;
  int mesh_n = 32;
  std::uint64_t seed = 0;
  int jobs = 1;
  SamplingConfig sampling;
  DatagenSection datagen;
  TrainSection train;
  FinetuneSection finetune;
  /// hints.residual_ref_scale doubles as the load-channel norm of training
  /// samples, so the network sees the same input scale in both places.
  HintsConfig hints;
  BenchSection bench;

  void validate() const;
};

/// Problem-specific defaults (elasticity: square geometry, mesh 24).
ExperimentConfig default_config(ProblemKind problem);
/// Throws ConfigError naming the file, line and key on any problem.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& yaml_text, const std::string& source_name = "<config>");
nlohmann::json config_to_json(const ExperimentConfig& cfg);

Arch arch_for(ProblemKind problem);

/// Network samples for one dataset, with the load channel scaled to the
/// HINTS reference norm and the targets scaled by the same factor times
/// output_scale.
OperatorDataset make_operator_dataset(const Dataset& data, const TriMesh& mesh, double load_norm,
                                      double output_scale = 1.0);
/// 1 / RMS of the targets.
double unit_rms_scale(const OperatorDataset& data);

struct DatagenSummary {
  std::string dataset_path;
  std::string mesh_path;
  int n_samples = 0;
  double seconds = 0.0;
};
/// Writes the dataset and a mesh JSON sidecar (<out>.mesh.json).
DatagenSummary run_datagen(const ExperimentConfig& cfg);

struct TrainSummary {
  std::string checkpoint_path;
  std::string history_path;
  double best_test_error = 0.0;
  int best_epoch = 0;
  double seconds = 0.0;
};
/// Trains on train.dataset, writes train.out and <out>.history.csv. Paths
/// are checked before any compute.
TrainSummary run_train(const ExperimentConfig& cfg, const EpochCallback& on_epoch = {});

struct FinetuneSummary {
  std::string checkpoint_path;
  std::string history_path;
  double source_test_error = -1.0;  // on finetune.test_dataset, when given
  double target_test_error = -1.0;
  double seconds = 0.0;
  double train_seconds = -1.0;      // from the source checkpoint, if recorded
};
FinetuneSummary run_finetune(const ExperimentConfig& cfg);

/// The 2x2 system [[2,1],[1,2]] u = [3,3] used to check the iteration by hand.
AssembledSystem debug_system();

struct SolveSummary {
  std::string trace_path;
  std::string solution_path;
  HintsTrace trace;
};
/// One solve of bench case `sample` with full trace export. `problem_name`
/// "debug" selects the 2x2 system (GS only).
SolveSummary run_solve(const ExperimentConfig& cfg, Method method, int sample, const std::string& out_prefix,
                       bool debug = false);

struct MethodStats {
  std::vector<int> counts;
  std::vector<bool> converged;
  double mean = 0.0;
  double median = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
};

/// mean, median and sample std of the counts.
MethodStats summarize(std::vector<int> counts, std::vector<bool> converged);

struct BenchReport {
  ProblemKind problem = ProblemKind::Darcy;
  GeometryTag geometry = GeometryTag::LShape;
  int n_cases = 0;
  std::vector<Method> methods;
  std::vector<MethodStats> stats;  // parallel to methods
  nlohmann::json config;
};

nlohmann::json report_to_json(const BenchReport& report);
std::string format_table(const BenchReport& report);

/// Runs every method on the same n_cases systems, `jobs` cases at a time;
/// results are stored by case index, so the report does not depend on jobs.
BenchReport run_bench(const ExperimentConfig& cfg);

/// Bench case systems are drawn from this seed, disjoint from datagen seeds.
std::uint64_t bench_seed(std::uint64_t seed);

}  // namespace hints
