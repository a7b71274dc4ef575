#include "hints/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "hints/error.hpp"
#include "hints/hints.hpp"
#include "hints/rng.hpp"

namespace hints {

static_assert(std::endian::native == std::endian::little, "dataset I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'H', 'N', 'T', 'S'};
constexpr std::uint64_t kCoeffStream = 0xC0EF;
constexpr std::uint64_t kLoadStream = 0x10AD;

std::uint32_t problem_code(ProblemKind k) { return k == ProblemKind::Darcy ? 0 : 1; }

ProblemKind problem_of(std::uint32_t code) {
  if (code == 0) return ProblemKind::Darcy;
  if (code == 1) return ProblemKind::Elasticity;
  throw IoError("dataset: unknown problem code " + std::to_string(code));
}

GeometryTag geometry_of(std::uint32_t code) {
  if (code > static_cast<std::uint32_t>(GeometryTag::SquareCircle)) {
    throw IoError("dataset: unknown geometry code " + std::to_string(code));
  }
  return static_cast<GeometryTag>(code);
}

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

void put_f64(std::ostream& os, std::span<const double> v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw IoError("dataset: truncated header");
  return v;
}

void get_f64(std::istream& is, std::span<double> v, std::size_t record) {
  if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)))) {
    throw IoError("dataset: truncated record " + std::to_string(record));
  }
}

Vector interleave_load(const Vector& f, int ncomp) {
  if (ncomp == 1) return f;
  Vector out(f.size() * 2, 0.0);
  for (std::size_t i = 0; i < f.size(); ++i) out[2 * i] = f[i];
  return out;
}

}  // namespace

void SamplingConfig::validate() const {
  if (!(coeff.std >= 0.0) || !(load.std >= 0.0)) throw ConfigError("sampling: std must be >= 0");
  if (!(coeff.corr_len > 0.0) || !(load.corr_len > 0.0)) throw ConfigError("sampling: corr_len must be positive");
  if (!(min_coeff > 0.0)) throw ConfigError("sampling: min_coeff must be positive");
  if (max_redraws < 1) throw ConfigError("sampling: max_redraws must be >= 1");
  if (!(material.nu > 0.0 && material.nu < 0.5)) throw ConfigError("sampling: nu must lie in (0, 0.5)");
}

SampleGenerator::SampleGenerator(const SamplingConfig& config)
    : config_(config), coeff_factor_(grf_factor(config.coeff)), load_factor_(grf_factor(config.load)) {
  config_.validate();
}

SampleFields SampleGenerator::draw(std::uint64_t seed, std::uint64_t index) const {
  SampleFields s;
  const std::uint64_t coeff_seed = derive_seed(seed, kCoeffStream, index);
  for (int attempt = 0;; ++attempt) {
    if (attempt >= config_.max_redraws) {
      throw NumericalError("datagen: sample " + std::to_string(index) + " needed more than " +
                           std::to_string(config_.max_redraws) + " redraws to stay above min_coeff");
    }
    s.coeff = grf_sample(coeff_factor_, derive_seed(coeff_seed, static_cast<std::uint64_t>(attempt)));
    if (*std::min_element(s.coeff.values.begin(), s.coeff.values.end()) >= config_.min_coeff) break;
  }
  s.load = grf_sample(load_factor_, derive_seed(seed, kLoadStream, index));
  return s;
}

AssembledSystem build_system(ProblemKind kind, std::shared_ptr<const TriMesh> mesh, const SampleFields& fields,
                             const MaterialParams& material) {
  const Vector coeff = grid_to_mesh(fields.coeff, *mesh);
  const Vector load = interleave_load(grid_to_mesh(fields.load, *mesh), components(kind));
  return assemble_system(kind, std::move(mesh), coeff, load, material);
}

GridField load_channel(const TriMesh& mesh, const GridField& load, const GridLocator& locator) {
  Vector nodal = grid_to_mesh(load, mesh);
  for (int i : mesh.dirichlet_nodes) nodal[i] = 0.0;
  return locator.to_grid(nodal);
}

Dataset generate_dataset(ProblemKind problem, GeometryTag geometry, int mesh_n, int n_samples, std::uint64_t seed,
                         const SamplingConfig& sampling, int jobs) {
  if (n_samples < 0) throw ConfigError("datagen: n_samples must be >= 0");
  if (jobs < 1) throw ConfigError("datagen: jobs must be >= 1");
  auto mesh = std::make_shared<const TriMesh>(make_geometry(geometry, mesh_n));
  const SampleGenerator gen(sampling);
  Dataset data;
  data.header.problem = problem;
  data.header.geometry = geometry;
  data.header.mesh_n = static_cast<std::uint32_t>(mesh_n);
  data.header.n_nodes = static_cast<std::uint32_t>(mesh->node_count());
  data.header.n_samples = static_cast<std::uint32_t>(n_samples);
  data.records.resize(n_samples);

  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int i = next++; i < n_samples; i = next++) {
      try {
        DatasetRecord& rec = data.records[i];
        rec.fields = gen.draw(seed, static_cast<std::uint64_t>(i));
        const AssembledSystem sys = build_system(problem, mesh, rec.fields, sampling.material);
        rec.solution = sys.scatter(SparseDirectSolver(sys.k).solve(sys.f));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n_samples;
      }
    }
  };
  const int n_threads = std::min(jobs, std::max(1, n_samples));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return data;
}

void write_dataset(std::ostream& os, const Dataset& data) {
  const auto& h = data.header;
  if (data.records.size() != h.n_samples) throw ConfigError("write_dataset: record count differs from header");
  os.write(kMagic, 4);
  put_u32(os, h.version);
  put_u32(os, problem_code(h.problem));
  put_u32(os, static_cast<std::uint32_t>(h.geometry));
  put_u32(os, h.grid);
  put_u32(os, h.mesh_n);
  put_u32(os, h.n_nodes);
  put_u32(os, h.n_samples);
  const std::size_t sol_len = static_cast<std::size_t>(h.n_nodes) * components(h.problem);
  for (const auto& r : data.records) {
    if (r.solution.size() != sol_len) throw ConfigError("write_dataset: solution length differs from header");
    put_f64(os, r.fields.coeff.values);
    put_f64(os, r.fields.load.values);
    put_f64(os, r.solution);
  }
  if (!os) throw IoError("write_dataset: write failed");
}

void write_dataset(const std::string& path, const Dataset& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_dataset(os, data);
  os.flush();
  if (!os) throw IoError("write to '" + path + "' failed");
}

Dataset read_dataset(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError("dataset: bad magic, not an HNTS file");
  Dataset data;
  auto& h = data.header;
  h.version = get_u32(is);
  if (h.version != 1) throw IoError("dataset: unsupported version " + std::to_string(h.version));
  h.problem = problem_of(get_u32(is));
  h.geometry = geometry_of(get_u32(is));
  h.grid = get_u32(is);
  if (h.grid != kGridSize) throw IoError("dataset: grid size " + std::to_string(h.grid) + " is not 31");
  h.mesh_n = get_u32(is);
  h.n_nodes = get_u32(is);
  h.n_samples = get_u32(is);
  const std::size_t sol_len = static_cast<std::size_t>(h.n_nodes) * components(h.problem);
  data.records.resize(h.n_samples);
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    auto& r = data.records[i];
    get_f64(is, r.fields.coeff.values, i);
    get_f64(is, r.fields.load.values, i);
    r.solution.resize(sol_len);
    get_f64(is, r.solution, i);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw IoError("dataset: trailing bytes after the last record");
  return data;
}

double record_residual(const Dataset& data, const TriMesh& mesh, std::size_t index, const MaterialParams& material) {
  auto shared = std::make_shared<const TriMesh>(mesh);
  const AssembledSystem sys = build_system(data.header.problem, shared, data.records.at(index).fields, material);
  const Vector u = sys.gather(data.records[index].solution);
  const double fn = norm2(sys.f);
  return norm2(residual(sys.k, sys.f, u)) / (fn > 0.0 ? fn : 1.0);
}

Dataset read_dataset(const std::string& path, const SamplingConfig& sampling) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset '" + path + "'");
  Dataset data = read_dataset(is);
  if (data.records.empty()) return data;
  const TriMesh mesh = make_geometry(data.header.geometry, static_cast<int>(data.header.mesh_n));
  if (static_cast<std::uint32_t>(mesh.node_count()) != data.header.n_nodes) {
    throw IoError("dataset '" + path + "': node count does not match the regenerated mesh");
  }
  for (std::size_t idx : {std::size_t{0}, data.records.size() - 1}) {
    const double rel = record_residual(data, mesh, idx, sampling.material);
    if (!(rel <= 1e-10)) {
      throw NumericalError("dataset '" + path + "': record " + std::to_string(idx) + " fails the residual check (" +
                           std::to_string(rel) + ")");
    }
  }
  return data;
}

OperatorDataset to_operator_dataset(const Dataset& data, const TriMesh& mesh) {
  if (static_cast<std::uint32_t>(mesh.node_count()) != data.header.n_nodes) {
    throw ConfigError("to_operator_dataset: mesh does not match the dataset");
  }
  const GridLocator locator(mesh);
  const int nc = components(data.header.problem);
  const auto n = static_cast<Eigen::Index>(data.records.size());
  OperatorDataset out;
  out.coords = mesh.nodes;
  out.inputs.resize(2 * kGridPoints, n);
  out.targets.resize(n, static_cast<Eigen::Index>(mesh.node_count()) * nc);
  for (Eigen::Index s = 0; s < n; ++s) {
    const auto& r = data.records[s];
    out.inputs.col(s) = branch_vector(mask_geometry(r.fields.coeff, mesh), load_channel(mesh, r.fields.load, locator));
    for (Eigen::Index c = 0; c < out.targets.cols(); ++c) out.targets(s, c) = r.solution[c];
  }
  return out;
}

}  // namespace hints
