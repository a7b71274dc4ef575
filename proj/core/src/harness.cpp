#include "hints/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <yaml-cpp/yaml.h>

#include "hints/error.hpp"
#include "hints/rng.hpp"

namespace hints {

namespace {

constexpr std::uint64_t kBenchStream = 0xBE4C;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " path is not set");
  if (!std::filesystem::is_regular_file(path)) throw ConfigError(std::string(what) + " '" + path + "' does not exist");
}

// Also creates the parent directory.
void require_out(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("output path for ") + what + " is not set");
  const auto parent = std::filesystem::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  if (ec) throw IoError("cannot create directory '" + parent.string() + "': " + ec.message());
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  return os;
}

// ---------------------------------------------------------------- YAML ----

class ConfigReader {
 public:
  explicit ConfigReader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& msg) const {
    const auto mark = node.Mark();
    throw ConfigError(source_ + ":" + std::to_string(mark.line + 1) + ":" + std::to_string(mark.column + 1) + ": " +
                      msg);
  }

  template <typename T>
  T as(const YAML::Node& node, const std::string& key, const char* type) const {
    try {
      return node.as<T>();
    } catch (const YAML::Exception&) {
      fail(node, "'" + key + "' must be " + type);
    }
  }

  int as_int(const YAML::Node& n, const std::string& k) const { return as<int>(n, k, "an integer"); }
  double as_double(const YAML::Node& n, const std::string& k) const { return as<double>(n, k, "a number"); }
  bool as_bool(const YAML::Node& n, const std::string& k) const { return as<bool>(n, k, "true or false"); }
  std::string as_string(const YAML::Node& n, const std::string& k) const { return as<std::string>(n, k, "a string"); }
  std::uint64_t as_u64(const YAML::Node& n, const std::string& k) const {
    return as<std::uint64_t>(n, k, "a non-negative integer");
  }

  template <typename F>
  auto wrap(const YAML::Node& n, const std::string& key, F&& f) const {
    try {
      return f();
    } catch (const ConfigError& e) {
      if (std::string(e.what()).starts_with(source_ + ":")) throw;
      fail(n, "'" + key + "': " + e.what());
    }
  }

  using Handler = std::function<void(const YAML::Node&, const std::string&)>;

  void visit(const YAML::Node& map, const std::string& section, const std::map<std::string, Handler>& handlers) const {
    if (!map.IsMap()) fail(map, "'" + section + "' must be a mapping");
    for (const auto& kv : map) {
      const std::string key = kv.first.as<std::string>();
      const std::string full = section.empty() ? key : section + "." + key;
      auto it = handlers.find(key);
      if (it == handlers.end()) fail(kv.first, "unknown key '" + full + "'");
      it->second(kv.second, full);
    }
  }

 private:
  std::string source_;
};

GrfSpec read_grf(const ConfigReader& r, const YAML::Node& node, const std::string& section, GrfSpec spec) {
  r.visit(node, section,
          {{"mean", [&](const YAML::Node& n, const std::string& k) { spec.mean = r.as_double(n, k); }},
           {"std", [&](const YAML::Node& n, const std::string& k) { spec.std = r.as_double(n, k); }},
           {"corr_len", [&](const YAML::Node& n, const std::string& k) { spec.corr_len = r.as_double(n, k); }}});
  return spec;
}

nlohmann::json grf_json(const GrfSpec& g) { return {{"mean", g.mean}, {"std", g.std}, {"corr_len", g.corr_len}}; }

// -------------------------------------------------------------- solves ----

struct LoadedModel {
  DeepONetParams params;
  double load_norm = 0.0;
  double output_scale = 1.0;
};

LoadedModel load_model(const std::string& path, const ExperimentConfig& cfg) {
  require_file(path, "checkpoint");
  Checkpoint c = load_checkpoint(path);
  if (c.params.arch.n_out != components(cfg.problem)) {
    throw ConfigError("checkpoint '" + path + "' does not fit the " + std::string(to_string(cfg.problem)) +
                      " problem");
  }
  LoadedModel m{std::move(c.params), cfg.hints.residual_ref_scale, cfg.hints.output_scale};
  if (c.meta.is_object()) {
    m.load_norm = c.meta.value("load_norm", m.load_norm);
    m.output_scale = c.meta.value("output_scale", m.output_scale);
  }
  return m;
}

SolveResult run_method(Method method, const AssembledSystem& sys, const SampleFields& fields,
                       const HintsConfig& base, const SolveReference& ref, const LoadedModel* model) {
  switch (method) {
    case Method::GS: return gs_solve(sys, base, &ref);
    case Method::Hints:
    case Method::HintsTL: {
      if (!model) throw ConfigError(std::string("method '") + std::string(to_string(method)) + "' needs a checkpoint");
      HintsConfig hc = base;
      hc.residual_ref_scale = model->load_norm;
      hc.output_scale = model->output_scale;
      return hints_solve(sys, model->params, fields.coeff, hc, &ref);
    }
    case Method::Direct: {
      SolveResult r;
      r.u = SparseDirectSolver(sys.k).solve(sys.f);
      HintsTrace& t = r.trace;
      t.threshold = base.tolerance * std::max(1.0, norm2(ref.u_star));
      Vector diff(r.u.size());
      for (auto step : {0, 1}) {
        const Vector u = step == 0 ? Vector(r.u.size(), 0.0) : r.u;
        for (std::size_t i = 0; i < u.size(); ++i) diff[i] = ref.u_star[i] - u[i];
        TraceRecord rec;
        rec.iteration = step;
        rec.kind = step == 0 ? StepKind::Initial : StepKind::GaussSeidel;
        rec.error_norm = norm2(diff);
        rec.residual_norm = norm2(residual(sys.k, sys.f, u));
        t.records.push_back(rec);
        if (rec.error_norm <= t.threshold) {
          t.converged_at = step;
          break;
        }
      }
      return r;
    }
  }
  throw ConfigError("unknown method");
}

void write_solution_csv(const std::string& path, const AssembledSystem& sys, const Vector& u, const Vector& u_star) {
  std::ofstream os = open_out(path);
  if (!sys.mesh) {
    os << "dof,u,u_star,error\n";
    for (std::size_t i = 0; i < u.size(); ++i) {
      os << i << ',' << fmt(u[i]) << ',' << fmt(u_star[i]) << ',' << fmt(u_star[i] - u[i]) << '\n';
    }
    return;
  }
  const int nc = components(sys.kind);
  const Vector uf = sys.scatter(u);
  const Vector sf = sys.scatter(u_star);
  if (nc == 1) {
    os << "node,x,y,u,u_star,error\n";
  } else {
    os << "node,x,y,ux,uy,ux_star,uy_star,error_x,error_y\n";
  }
  for (int i = 0; i < sys.mesh->node_count(); ++i) {
    const Point p = sys.mesh->nodes[i];
    os << i << ',' << fmt(p.x) << ',' << fmt(p.y);
    for (int c = 0; c < nc; ++c) os << ',' << fmt(uf[i * nc + c]);
    for (int c = 0; c < nc; ++c) os << ',' << fmt(sf[i * nc + c]);
    for (int c = 0; c < nc; ++c) os << ',' << fmt(sf[i * nc + c] - uf[i * nc + c]);
    os << '\n';
  }
}

std::string trace_name(const ExperimentConfig& cfg, Method m, int sample, bool debug) {
  return std::string(debug ? "debug" : to_string(cfg.problem)) + "_" + std::string(to_string(cfg.geometry)) + "_" +
         std::string(to_string(m)) + "_" + std::to_string(sample);
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::GS: return "gs";
    case Method::Hints: return "hints";
    case Method::HintsTL: return "hints-tl";
    case Method::Direct: return "direct";
  }
  return "?";
}

Method method_from_string(std::string_view name) {
  if (name == "gs") return Method::GS;
  if (name == "hints") return Method::Hints;
  if (name == "hints-tl") return Method::HintsTL;
  if (name == "direct") return Method::Direct;
  throw ConfigError("unknown method '" + std::string(name) + "' (expected gs, hints, hints-tl or direct)");
}

void ExperimentConfig::validate() const {
  if (mesh_n < 1) throw ConfigError("mesh_n must be >= 1");
  if ((geometry == GeometryTag::LShape || geometry == GeometryTag::LShapeCircle ||
       geometry == GeometryTag::LShapeTriangle) &&
      mesh_n % 2 != 0) {
    throw ConfigError("L-shaped geometries need an even mesh_n");
  }
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  sampling.validate();
  hints.validate();
  finetune.config.validate();
  if (datagen.n_samples < 0) throw ConfigError("datagen.n_samples must be >= 0");
  if (train.config.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (train.config.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(train.config.adam.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (train.config.eval_interval < 1) throw ConfigError("train.eval_interval must be >= 1");
  if (train.config.lr_decay_every < 0) throw ConfigError("train.lr_decay_every must be >= 0");
  if (!(train.config.lr_decay_factor > 0.0 && train.config.lr_decay_factor <= 1.0)) {
    throw ConfigError("train.lr_decay_factor must lie in (0, 1]");
  }
  if (finetune.n_target_samples < 1) throw ConfigError("finetune.n_target_samples must be >= 1");
  if (finetune.n_source_samples < 1) throw ConfigError("finetune.n_source_samples must be >= 1");
  if (bench.n_cases < 1) throw ConfigError("bench.cases must be >= 1");
  if (bench.methods.empty()) throw ConfigError("bench.methods is empty");
}

ExperimentConfig default_config(ProblemKind problem) {
  ExperimentConfig c;
  c.problem = problem;
  if (problem == ProblemKind::Elasticity) {
    c.geometry = GeometryTag::Square;
    c.mesh_n = 24;
  }
  return c;
}

ExperimentConfig parse_config(const std::string& yaml_text, const std::string& source_name) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source_name + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  const ConfigReader r(source_name);
  if (root.IsNull()) return default_config(ProblemKind::Darcy);
  if (!root.IsMap()) r.fail(root, "top level must be a mapping");

  ProblemKind problem = ProblemKind::Darcy;
  if (root["problem"]) {
    problem = r.wrap(root["problem"], "problem", [&] { return problem_from_string(r.as_string(root["problem"], "problem")); });
  }
  ExperimentConfig c = default_config(problem);
  using H = ConfigReader::Handler;
  auto set_int = [&](int& dst) -> H { return [&r, &dst](const YAML::Node& n, const std::string& k) { dst = r.as_int(n, k); }; };
  auto set_dbl = [&](double& dst) -> H { return [&r, &dst](const YAML::Node& n, const std::string& k) { dst = r.as_double(n, k); }; };
  auto set_str = [&](std::string& dst) -> H { return [&r, &dst](const YAML::Node& n, const std::string& k) { dst = r.as_string(n, k); }; };
  auto set_u64 = [&](std::uint64_t& dst) -> H { return [&r, &dst](const YAML::Node& n, const std::string& k) { dst = r.as_u64(n, k); }; };
  auto set_bool = [&](bool& dst) -> H { return [&r, &dst](const YAML::Node& n, const std::string& k) { dst = r.as_bool(n, k); }; };
  auto set_opt = [&](std::optional<double>& dst) -> H {
    return [&r, &dst](const YAML::Node& n, const std::string& k) {
      if (n.IsNull()) {
        dst.reset();
      } else {
        dst = r.as_double(n, k);
      }
    };
  };

  r.visit(root, "", {
    {"problem", [](const YAML::Node&, const std::string&) {}},
    {"geometry", [&](const YAML::Node& n, const std::string& k) {
       c.geometry = r.wrap(n, k, [&] { return geometry_from_string(r.as_string(n, k)); });
     }},
    {"mesh_n", set_int(c.mesh_n)},
    {"seed", set_u64(c.seed)},
    {"jobs", set_int(c.jobs)},
    {"sampling", [&](const YAML::Node& n, const std::string& k) {
       r.visit(n, k, {
         {"coeff", [&](const YAML::Node& m, const std::string& kk) { c.sampling.coeff = read_grf(r, m, kk, c.sampling.coeff); }},
         {"load", [&](const YAML::Node& m, const std::string& kk) { c.sampling.load = read_grf(r, m, kk, c.sampling.load); }},
         {"min_coeff", set_dbl(c.sampling.min_coeff)},
         {"max_redraws", set_int(c.sampling.max_redraws)},
         {"nu", set_dbl(c.sampling.material.nu)},
       });
     }},
    {"datagen", [&](const YAML::Node& n, const std::string& k) {
       r.visit(n, k, {{"n_samples", set_int(c.datagen.n_samples)}, {"out", set_str(c.datagen.out)}});
     }},
    {"train", [&](const YAML::Node& n, const std::string& k) {
       auto& t = c.train;
       r.visit(n, k, {
         {"dataset", set_str(t.dataset)},
         {"test_dataset", set_str(t.test_dataset)},
         {"out", set_str(t.out)},
         {"resume", set_str(t.resume)},
         {"epochs", set_int(t.config.epochs)},
         {"batch_size", set_int(t.config.batch_size)},
         {"learning_rate", set_dbl(t.config.adam.learning_rate)},
         {"beta1", set_dbl(t.config.adam.beta1)},
         {"beta2", set_dbl(t.config.adam.beta2)},
         {"epsilon", set_dbl(t.config.adam.epsilon)},
         {"eval_interval", set_int(t.config.eval_interval)},
         {"lr_decay_every", set_int(t.config.lr_decay_every)},
         {"lr_decay_factor", set_dbl(t.config.lr_decay_factor)},
         {"seed", set_u64(t.config.seed)},
       });
     }},
    {"finetune", [&](const YAML::Node& n, const std::string& k) {
       auto& f = c.finetune;
       r.visit(n, k, {
         {"source_checkpoint", set_str(f.source_checkpoint)},
         {"target_dataset", set_str(f.target_dataset)},
         {"source_dataset", set_str(f.source_dataset)},
         {"test_dataset", set_str(f.test_dataset)},
         {"out", set_str(f.out)},
         {"n_target_samples", set_int(f.n_target_samples)},
         {"n_source_samples", set_int(f.n_source_samples)},
         {"iterations", set_int(f.config.iterations)},
         {"learning_rate", set_dbl(f.config.learning_rate)},
         {"lambda1", set_dbl(f.config.lambda1)},
         {"lambda2", set_dbl(f.config.lambda2)},
         {"adaptive_lambda2", set_bool(f.config.adaptive_lambda2)},
         {"lambda2_rate", set_dbl(f.config.lambda2_rate)},
         {"gamma_x", set_opt(f.config.gamma_x)},
         {"gamma_y", set_opt(f.config.gamma_y)},
         {"ridge", set_dbl(f.config.ridge)},
         {"batch_size", set_int(f.config.batch_size)},
         {"seed", set_u64(f.config.seed)},
       });
     }},
    {"hints", [&](const YAML::Node& n, const std::string& k) {
       auto& h = c.hints;
       r.visit(n, k, {
         {"ratio", set_int(h.ratio)},
         {"max_iterations", set_int(h.max_iterations)},
         {"tolerance", set_dbl(h.tolerance)},
         {"residual_ref_scale", set_dbl(h.residual_ref_scale)},
         {"track_modes", [&](const YAML::Node& m, const std::string& kk) {
            if (!m.IsSequence()) r.fail(m, "'" + kk + "' must be a list of integers");
            h.track_modes.clear();
            for (const auto& e : m) h.track_modes.push_back(r.as_int(e, kk));
          }},
       });
     }},
    {"bench", [&](const YAML::Node& n, const std::string& k) {
       auto& b = c.bench;
       r.visit(n, k, {
         {"cases", set_int(b.n_cases)},
         {"checkpoint", set_str(b.checkpoint)},
         {"tl_checkpoint", set_str(b.tl_checkpoint)},
         {"out", set_str(b.out)},
         {"trace_dir", set_str(b.trace_dir)},
         {"methods", [&](const YAML::Node& m, const std::string& kk) {
            if (!m.IsSequence()) r.fail(m, "'" + kk + "' must be a list of method names");
            b.methods.clear();
            for (const auto& e : m) b.methods.push_back(r.wrap(e, kk, [&] { return method_from_string(r.as_string(e, kk)); }));
          }},
       });
     }},
  });
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source_name + ": " + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path);
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json methods = nlohmann::json::array();
  for (Method m : c.bench.methods) methods.push_back(std::string(to_string(m)));
  const auto& f = c.finetune.config;
  return {
      {"problem", std::string(to_string(c.problem))},
      {"geometry", std::string(to_string(c.geometry))},
      {"mesh_n", c.mesh_n},
      {"seed", c.seed},
      {"sampling",
       {{"coeff", grf_json(c.sampling.coeff)},
        {"load", grf_json(c.sampling.load)},
        {"min_coeff", c.sampling.min_coeff},
        {"max_redraws", c.sampling.max_redraws},
        {"nu", c.sampling.material.nu}}},
      {"datagen", {{"n_samples", c.datagen.n_samples}}},
      {"train",
       {{"epochs", c.train.config.epochs},
        {"batch_size", c.train.config.batch_size},
        {"learning_rate", c.train.config.adam.learning_rate},
        {"beta1", c.train.config.adam.beta1},
        {"beta2", c.train.config.adam.beta2},
        {"epsilon", c.train.config.adam.epsilon},
        {"eval_interval", c.train.config.eval_interval},
        {"lr_decay_every", c.train.config.lr_decay_every},
        {"lr_decay_factor", c.train.config.lr_decay_factor},
        {"seed", c.train.config.seed}}},
      {"finetune",
       {{"n_target_samples", c.finetune.n_target_samples},
        {"n_source_samples", c.finetune.n_source_samples},
        {"iterations", f.iterations},
        {"learning_rate", f.learning_rate},
        {"lambda1", f.lambda1},
        {"lambda2", f.lambda2},
        {"adaptive_lambda2", f.adaptive_lambda2},
        {"ridge", f.ridge},
        {"batch_size", f.batch_size},
        {"seed", f.seed}}},
      {"hints",
       {{"ratio", c.hints.ratio},
        {"max_iterations", c.hints.max_iterations},
        {"tolerance", c.hints.tolerance},
        {"residual_ref_scale", c.hints.residual_ref_scale},
        {"track_modes", c.hints.track_modes}}},
      {"bench", {{"cases", c.bench.n_cases}, {"methods", methods}}},
  };
}

Arch arch_for(ProblemKind problem) { return problem == ProblemKind::Darcy ? Arch::darcy() : Arch::elasticity(); }

OperatorDataset make_operator_dataset(const Dataset& data, const TriMesh& mesh, double load_norm,
                                      double output_scale) {
  if (!(load_norm > 0.0)) throw ConfigError("load norm must be positive");
  if (!(output_scale > 0.0)) throw ConfigError("output scale must be positive");
  OperatorDataset out = to_operator_dataset(data, mesh);
  for (int i = 0; i < out.size(); ++i) {
    auto load = out.inputs.col(i).tail(kGridPoints);
    const double n = load.norm();
    if (n == 0.0) continue;
    const double s = load_norm / n;
    load *= s;
    out.targets.row(i) *= s * output_scale;
  }
  return out;
}

double unit_rms_scale(const OperatorDataset& data) {
  if (data.targets.size() == 0) return 1.0;
  const double rms = std::sqrt(data.targets.squaredNorm() / static_cast<double>(data.targets.size()));
  return rms > 0.0 ? 1.0 / rms : 1.0;
}

std::uint64_t bench_seed(std::uint64_t seed) { return derive_seed(seed, kBenchStream); }

DatagenSummary run_datagen(const ExperimentConfig& cfg) {
  cfg.validate();
  require_out(cfg.datagen.out, "datagen");
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset data =
      generate_dataset(cfg.problem, cfg.geometry, cfg.mesh_n, cfg.datagen.n_samples, cfg.seed, cfg.sampling, cfg.jobs);
  DatagenSummary s;
  s.dataset_path = cfg.datagen.out;
  s.mesh_path = cfg.datagen.out + ".mesh.json";
  write_dataset(s.dataset_path, data);
  write_json_file(s.mesh_path, mesh_to_json(make_geometry(cfg.geometry, cfg.mesh_n)));
  s.n_samples = cfg.datagen.n_samples;
  s.seconds = seconds_since(t0);
  return s;
}

namespace {

struct LoadedData {
  Dataset data;
  TriMesh mesh;
};

LoadedData load_dataset_for(const std::string& path, const ExperimentConfig& cfg) {
  LoadedData d{read_dataset(path, cfg.sampling), {}};
  if (d.data.header.problem != cfg.problem) {
    throw ConfigError("dataset '" + path + "' holds " + std::string(to_string(d.data.header.problem)) +
                      " samples, the config asks for " + std::string(to_string(cfg.problem)));
  }
  d.mesh = make_geometry(d.data.header.geometry, static_cast<int>(d.data.header.mesh_n));
  return d;
}

Dataset head(Dataset d, int n) {
  if (static_cast<int>(d.records.size()) > n) d.records.resize(n);
  d.header.n_samples = static_cast<std::uint32_t>(d.records.size());
  return d;
}

}  // namespace

TrainSummary run_train(const ExperimentConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const auto& t = cfg.train;
  require_file(t.dataset, "train.dataset");
  if (!t.test_dataset.empty()) require_file(t.test_dataset, "train.test_dataset");
  if (!t.resume.empty()) require_file(t.resume, "train.resume");
  require_out(t.out, "train");

  const auto t0 = std::chrono::steady_clock::now();
  std::optional<TrainState> resume;
  double load_norm = cfg.hints.residual_ref_scale;
  std::optional<double> output_scale;
  if (!t.resume.empty()) {
    Checkpoint c = load_checkpoint(t.resume);
    if (!c.resume) throw ConfigError("checkpoint '" + t.resume + "' has no resume state");
    resume = std::move(c.resume);
    if (c.meta.is_object()) {
      load_norm = c.meta.value("load_norm", load_norm);
      if (c.meta.contains("output_scale")) output_scale = c.meta["output_scale"].get<double>();
    }
  }
  const LoadedData train_data = load_dataset_for(t.dataset, cfg);
  OperatorDataset train_set = make_operator_dataset(train_data.data, train_data.mesh, load_norm);
  if (!output_scale) output_scale = unit_rms_scale(train_set);
  train_set.targets *= *output_scale;
  OperatorDataset test_set;
  if (!t.test_dataset.empty()) {
    const LoadedData test_data = load_dataset_for(t.test_dataset, cfg);
    if (test_data.data.header.geometry != train_data.data.header.geometry ||
        test_data.data.header.mesh_n != train_data.data.header.mesh_n) {
      throw ConfigError("train and test datasets use different meshes");
    }
    test_set = make_operator_dataset(test_data.data, test_data.mesh, load_norm, *output_scale);
  } else {
    test_set.coords = train_set.coords;
    test_set.inputs.resize(train_set.inputs.rows(), 0);
    test_set.targets.resize(0, train_set.targets.cols());
  }

  const Arch arch = arch_for(cfg.problem);
  const TrainResult res = train(train_set, test_set, arch, t.config, resume ? &*resume : nullptr, on_epoch);

  Checkpoint ckpt;
  ckpt.params = res.best;
  ckpt.seed = t.config.seed;
  ckpt.epoch = res.history.best_epoch;
  ckpt.resume = res.last;
  ckpt.meta = {{"problem", std::string(to_string(cfg.problem))},
               {"geometry", std::string(to_string(train_data.data.header.geometry))},
               {"mesh_n", train_data.data.header.mesh_n},
               {"load_norm", load_norm},
               {"output_scale", *output_scale},
               {"epochs", t.config.epochs},
               {"best_epoch", res.history.best_epoch},
               {"best_test_error", res.history.best_test_error}};
  save_checkpoint(t.out, ckpt);

  TrainSummary s;
  s.checkpoint_path = t.out;
  s.history_path = t.out + ".history.csv";
  {
    std::ofstream os = open_out(s.history_path);
    os << "epoch,train_loss,test_error\n";
    std::size_t e = 0;
    const int first = resume ? resume->epoch : 0;
    for (std::size_t i = 0; i < res.history.train_loss.size(); ++i) {
      const int epoch = first + static_cast<int>(i) + 1;
      os << epoch << ',' << fmt(res.history.train_loss[i]) << ',';
      if (e < res.history.eval_epochs.size() && res.history.eval_epochs[e] == epoch) os << fmt(res.history.test_error[e++]);
      os << '\n';
    }
  }
  s.best_test_error = res.history.best_test_error;
  s.best_epoch = res.history.best_epoch;
  s.seconds = seconds_since(t0);
  write_json_file(t.out + ".timing.json", {{"train_seconds", s.seconds}});
  return s;
}

FinetuneSummary run_finetune(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto& f = cfg.finetune;
  require_file(f.source_checkpoint, "finetune.source_checkpoint");
  require_file(f.target_dataset, "finetune.target_dataset");
  if (f.config.lambda2 != 0.0) require_file(f.source_dataset, "finetune.source_dataset");
  if (!f.test_dataset.empty()) require_file(f.test_dataset, "finetune.test_dataset");
  require_out(f.out, "finetune");

  const auto t0 = std::chrono::steady_clock::now();
  const LoadedModel source = load_model(f.source_checkpoint, cfg);
  const LoadedData target = load_dataset_for(f.target_dataset, cfg);
  const OperatorDataset target_set =
      make_operator_dataset(head(target.data, f.n_target_samples), target.mesh, source.load_norm, source.output_scale);
  OperatorDataset source_set;
  if (f.config.lambda2 != 0.0) {
    const LoadedData src = load_dataset_for(f.source_dataset, cfg);
    source_set = make_operator_dataset(head(src.data, f.n_source_samples), src.mesh, source.load_norm, source.output_scale);
  }
  const FineTuneResult res = fine_tune(source.params, target_set, source_set, f.config);

  Checkpoint ckpt;
  ckpt.params = res.params;
  ckpt.seed = f.config.seed;
  ckpt.epoch = f.config.iterations;
  ckpt.provenance = {{"source_checkpoint", std::filesystem::path(f.source_checkpoint).filename().string()},
                     {"target_geometry", std::string(to_string(target.data.header.geometry))},
                     {"config", config_to_json(cfg)["finetune"]},
                     {"gamma_x", res.history.gamma_x},
                     {"gamma_y", res.history.gamma_y}};
  ckpt.meta = {{"problem", std::string(to_string(cfg.problem))},
               {"geometry", std::string(to_string(target.data.header.geometry))},
               {"mesh_n", target.data.header.mesh_n},
               {"load_norm", source.load_norm},
               {"output_scale", source.output_scale}};
  save_checkpoint(f.out, ckpt);

  FinetuneSummary s;
  s.checkpoint_path = f.out;
  s.history_path = f.out + ".history.csv";
  {
    std::ofstream os = open_out(s.history_path);
    os << "iteration,loss,regression,ceod,lambda2\n";
    for (std::size_t i = 0; i < res.history.loss.size(); ++i) {
      os << i + 1 << ',' << fmt(res.history.loss[i]) << ',' << fmt(res.history.regression[i]) << ','
         << fmt(res.history.ceod[i]) << ',' << fmt(res.history.lambda2[i]) << '\n';
    }
  }
  if (!f.test_dataset.empty()) {
    const LoadedData test = load_dataset_for(f.test_dataset, cfg);
    const OperatorDataset test_set = make_operator_dataset(test.data, test.mesh, source.load_norm, source.output_scale);
    s.source_test_error = mean_relative_error(forward(source.params, test_set.inputs, test_set.coords), test_set.targets);
    s.target_test_error = mean_relative_error(forward(res.params, test_set.inputs, test_set.coords), test_set.targets);
  }
  s.seconds = seconds_since(t0);
  const std::string timing = f.source_checkpoint + ".timing.json";
  if (std::filesystem::is_regular_file(timing)) s.train_seconds = read_json_file(timing).value("train_seconds", -1.0);
  nlohmann::json tj = {{"finetune_seconds", s.seconds}, {"train_seconds", s.train_seconds}};
  if (s.train_seconds >= 0.0) tj["finetune_faster"] = s.seconds < s.train_seconds;
  write_json_file(f.out + ".timing.json", tj);
  return s;
}

AssembledSystem debug_system() {
  AssembledSystem s;
  s.k = CsrMatrix::from_dense((DenseMatrix(2, 2) << 2.0, 1.0, 1.0, 2.0).finished());
  s.f = {3.0, 3.0};
  s.free_dofs = {{0, 0}, {1, 0}};
  s.kind = ProblemKind::Darcy;
  return s;
}

SolveSummary run_solve(const ExperimentConfig& cfg, Method method, int sample, const std::string& out_prefix,
                       bool debug) {
  cfg.validate();
  if (sample < 0) throw ConfigError("sample index must be >= 0");
  if (debug && method != Method::GS && method != Method::Direct) {
    throw ConfigError("the debug system supports the gs and direct methods only");
  }
  std::optional<LoadedModel> model;
  if (method == Method::Hints) model = load_model(cfg.bench.checkpoint, cfg);
  if (method == Method::HintsTL) model = load_model(cfg.bench.tl_checkpoint, cfg);

  AssembledSystem sys;
  SampleFields fields;
  if (debug) {
    sys = debug_system();
  } else {
    auto mesh = std::make_shared<const TriMesh>(make_geometry(cfg.geometry, cfg.mesh_n));
    fields = SampleGenerator(cfg.sampling).draw(bench_seed(cfg.seed), static_cast<std::uint64_t>(sample));
    sys = build_system(cfg.problem, mesh, fields, cfg.sampling.material);
  }
  HintsConfig hc = cfg.hints;
  if (!debug && hc.track_modes.empty()) hc.track_modes = default_tracked_modes(sys.size());
  const SolveReference ref = make_reference(sys, !hc.track_modes.empty());
  SolveResult res = run_method(method, sys, fields, hc, ref, model ? &*model : nullptr);

  SolveSummary s;
  const std::string base = out_prefix + trace_name(cfg, method, sample, debug);
  require_out(base, "solve");
  s.trace_path = base + ".csv";
  s.solution_path = base + "_solution.csv";
  {
    std::ofstream os = open_out(s.trace_path);
    write_trace_csv(os, res.trace);
    if (!os) throw IoError("write to '" + s.trace_path + "' failed");
  }
  write_solution_csv(s.solution_path, sys, res.u, ref.u_star);
  s.trace = std::move(res.trace);
  return s;
}

MethodStats summarize(std::vector<int> counts, std::vector<bool> converged) {
  if (counts.empty()) throw ConfigError("summarize: no counts");
  MethodStats s;
  s.counts = counts;
  s.converged = std::move(converged);
  const double n = static_cast<double>(counts.size());
  s.mean = std::accumulate(counts.begin(), counts.end(), 0.0) / n;
  std::sort(counts.begin(), counts.end());
  const std::size_t mid = counts.size() / 2;
  s.median = counts.size() % 2 ? counts[mid] : 0.5 * (counts[mid - 1] + counts[mid]);
  double ss = 0.0;
  for (int c : counts) ss += (c - s.mean) * (c - s.mean);
  s.std = counts.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return s;
}

nlohmann::json report_to_json(const BenchReport& r) {
  nlohmann::json methods = nlohmann::json::object();
  for (std::size_t m = 0; m < r.methods.size(); ++m) {
    const auto& s = r.stats[m];
    methods[std::string(to_string(r.methods[m]))] = {{"counts", s.counts},
                                                     {"converged", s.converged},
                                                     {"mean", s.mean},
                                                     {"median", s.median},
                                                     {"std", s.std}};
  }
  return {{"problem", std::string(to_string(r.problem))},
          {"geometry", std::string(to_string(r.geometry))},
          {"n_cases", r.n_cases},
          {"methods", methods},
          {"config", r.config}};
}

std::string format_table(const BenchReport& r) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%s on %s, %d cases\n", std::string(to_string(r.problem)).c_str(),
                std::string(to_string(r.geometry)).c_str(), r.n_cases);
  os << line;
  std::snprintf(line, sizeof line, "%-10s %10s %10s %10s %10s\n", "method", "mean", "median", "std", "converged");
  os << line;
  for (std::size_t m = 0; m < r.methods.size(); ++m) {
    const auto& s = r.stats[m];
    const auto ok = std::count(s.converged.begin(), s.converged.end(), true);
    std::snprintf(line, sizeof line, "%-10s %10.1f %10.1f %10.1f %6ld/%-3zu\n",
                  std::string(to_string(r.methods[m])).c_str(), s.mean, s.median, s.std, static_cast<long>(ok),
                  s.converged.size());
    os << line;
  }
  return os.str();
}

BenchReport run_bench(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto& b = cfg.bench;
  std::optional<LoadedModel> source, tuned;
  for (Method m : b.methods) {
    if (m == Method::Hints && !source) source = load_model(b.checkpoint, cfg);
    if (m == Method::HintsTL && !tuned) tuned = load_model(b.tl_checkpoint, cfg);
  }
  if (!b.trace_dir.empty()) std::filesystem::create_directories(b.trace_dir);
  if (!b.out.empty()) require_out(b.out, "bench");

  auto mesh = std::make_shared<const TriMesh>(make_geometry(cfg.geometry, cfg.mesh_n));
  const SampleGenerator gen(cfg.sampling);
  const std::size_t n_methods = b.methods.size();
  std::vector<std::vector<int>> counts(n_methods, std::vector<int>(b.n_cases));
  std::vector<std::vector<bool>> converged(n_methods, std::vector<bool>(b.n_cases));

  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int i = next++; i < b.n_cases; i = next++) {
      try {
        const SampleFields fields = gen.draw(bench_seed(cfg.seed), static_cast<std::uint64_t>(i));
        const AssembledSystem sys = build_system(cfg.problem, mesh, fields, cfg.sampling.material);
        const SolveReference ref = make_reference(sys, !cfg.hints.track_modes.empty());
        for (std::size_t m = 0; m < n_methods; ++m) {
          const Method method = b.methods[m];
          const LoadedModel* model = method == Method::Hints ? &*source : method == Method::HintsTL ? &*tuned : nullptr;
          const SolveResult res = run_method(method, sys, fields, cfg.hints, ref, model);
          counts[m][i] = res.trace.iterations();
          converged[m][i] = res.trace.converged_at.has_value();
          if (!b.trace_dir.empty()) {
            const auto path = std::filesystem::path(b.trace_dir) / (trace_name(cfg, method, i, false) + ".csv");
            std::ofstream os = open_out(path.string());
            write_trace_csv(os, res.trace);
          }
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = b.n_cases;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < std::min(cfg.jobs, b.n_cases); ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);

  BenchReport r;
  r.problem = cfg.problem;
  r.geometry = cfg.geometry;
  r.n_cases = b.n_cases;
  r.methods = b.methods;
  for (std::size_t m = 0; m < n_methods; ++m) r.stats.push_back(summarize(counts[m], converged[m]));
  r.config = config_to_json(cfg);
  if (!b.out.empty()) write_json_file(b.out, report_to_json(r));
  return r;
}

}  // namespace hints
