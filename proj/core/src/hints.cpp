#include "hints/hints.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "hints/error.hpp"

namespace hints {

namespace {

bool mirror_symmetric(GeometryTag tag) { return tag == GeometryTag::Square || tag == GeometryTag::SquareCircle; }

std::vector<int> resolve_modes(std::span<const int> requested, int n) {
  std::vector<int> out;
  for (int m : requested) {
    const int idx = m < 0 ? n + m : m;
    if (idx < 0 || idx >= n) {
      throw ConfigError("tracked mode " + std::to_string(m) + " is out of range for " + std::to_string(n) + " dofs");
    }
    out.push_back(idx);
  }
  return out;
}

class Recorder {
 public:
  Recorder(const AssembledSystem& system, const HintsConfig& config, const SolveReference* reference)
      : system_(system) {
    if (reference) {
      ref_ = reference;
    } else {
      owned_ = make_reference(system, !config.track_modes.empty());
      ref_ = &owned_;
    }
    if (ref_->u_star.size() != static_cast<std::size_t>(system.size())) {
      throw ConfigError("solve reference does not match the system size");
    }
    if (!config.track_modes.empty()) {
      if (!ref_->basis) throw ConfigError("mode tracking needs a reference with an eigenbasis");
      trace_.tracked_modes = resolve_modes(config.track_modes, system.size());
    }
    trace_.threshold = config.tolerance * std::max(1.0, norm2(ref_->u_star));
    diff_.resize(system.size());
  }

  /// Appends a record; returns true when u is within the threshold.
  bool record(int iteration, StepKind kind, std::span<const double> u) {
    for (std::size_t i = 0; i < diff_.size(); ++i) diff_[i] = ref_->u_star[i] - u[i];
    TraceRecord rec;
    rec.iteration = iteration;
    rec.kind = kind;
    rec.error_norm = norm2(diff_);
    rec.residual_norm = norm2(residual(system_.k, system_.f, u));
    if (!std::isfinite(rec.error_norm)) {
      throw NumericalError("non-finite error norm at iteration " + std::to_string(iteration));
    }
    if (!trace_.tracked_modes.empty()) {
      rec.mode_errors = mode_errors(*ref_->basis, ref_->u_star, u, trace_.tracked_modes);
    }
    const bool done = rec.error_norm <= trace_.threshold;
    trace_.records.push_back(std::move(rec));
    if (done) trace_.converged_at = iteration;
    return done;
  }

  HintsTrace take() { return std::move(trace_); }

 private:
  const AssembledSystem& system_;
  const SolveReference* ref_ = nullptr;
  SolveReference owned_;
  HintsTrace trace_;
  Vector diff_;
};

}  // namespace

void HintsConfig::validate() const {
  if (ratio < 1) throw ConfigError("hints: ratio must be >= 1");
  if (max_iterations < 1) throw ConfigError("hints: max_iterations must be >= 1");
  if (!(tolerance > 0.0)) throw ConfigError("hints: tolerance must be positive");
  if (!(residual_ref_scale > 0.0)) throw ConfigError("hints: residual_ref_scale must be positive");
  if (!(output_scale > 0.0)) throw ConfigError("hints: output_scale must be positive");
}

std::vector<int> default_tracked_modes(int n) {
  std::vector<int> m{0, 1, 2, n / 2, n - 2, n - 1};
  std::erase_if(m, [n](int i) { return i < 0 || i >= n; });
  std::sort(m.begin(), m.end());
  m.erase(std::unique(m.begin(), m.end()), m.end());
  return m;
}

std::string_view to_string(StepKind kind) {
  switch (kind) {
    case StepKind::Initial: return "init";
    case StepKind::GaussSeidel: return "gs";
    case StepKind::DeepONet: return "deeponet";
  }
  return "?";
}

SolveReference make_reference(const AssembledSystem& system, bool with_basis) {
  SolveReference ref;
  const DenseMatrix k = system.k.to_dense();
  ref.u_star = dense_solve(k, system.f);
  if (with_basis) ref.basis = std::make_shared<const EigenBasis>(sym_eigen(k));
  return ref;
}

std::vector<double> mode_errors(const EigenBasis& basis, std::span<const double> u_star,
                                std::span<const double> u, std::span<const int> tracked) {
  const auto n = basis.eigenvectors.rows();
  if (static_cast<Eigen::Index>(u_star.size()) != n || static_cast<Eigen::Index>(u.size()) != n) {
    throw ConfigError("mode_errors: vector length does not match the basis");
  }
  Eigen::VectorXd e(n);
  for (Eigen::Index i = 0; i < n; ++i) e[i] = u_star[i] - u[i];
  std::vector<double> out;
  out.reserve(tracked.size());
  for (int idx : tracked) {
    if (idx < 0 || idx >= n) throw ConfigError("mode_errors: index " + std::to_string(idx) + " out of range");
    out.push_back(std::abs(basis.eigenvectors.col(idx).dot(e)));
  }
  return out;
}

SolveResult gs_solve(const AssembledSystem& system, const HintsConfig& config, const SolveReference* reference) {
  config.validate();
  Recorder rec(system, config, reference);
  Vector u(system.size(), 0.0);
  if (!rec.record(0, StepKind::Initial, u)) {
    for (int t = 1; t <= config.max_iterations; ++t) {
      gauss_seidel_sweep(system.k, system.f, u);
      if (rec.record(t, StepKind::GaussSeidel, u)) break;
    }
  }
  return {std::move(u), rec.take()};
}

Eigen::VectorXd branch_vector(const GridField& channel0, const GridField& channel1) {
  Eigen::VectorXd v(2 * kGridPoints);
  for (int p = 0; p < kGridPoints; ++p) {
    v[p] = channel0.values[p];
    v[kGridPoints + p] = channel1.values[p];
  }
  return v;
}

GridField residual_field(const AssembledSystem& system, std::span<const double> r_full, int component,
                         const GridLocator& locator) {
  const TriMesh& mesh = *system.mesh;
  const int nc = components(system.kind);
  if (r_full.size() != static_cast<std::size_t>(system.full_size())) {
    throw ConfigError("residual_field: expected a full-layout vector");
  }
  if (component < 0 || component >= nc) throw ConfigError("residual_field: component out of range");
  const Vector areas = nodal_areas(mesh);
  Vector nodal(mesh.node_count());
  for (int i = 0; i < mesh.node_count(); ++i) nodal[i] = r_full[i * nc + component] / areas[i];
  return locator.to_grid(nodal);
}

BranchInput residual_to_branch_input(const AssembledSystem& system, std::span<const double> r_full,
                                     const GridField& coeff_grid, const HintsConfig& config, int component,
                                     const GridLocator* locator) {
  std::optional<GridLocator> own;
  if (!locator) locator = &own.emplace(*system.mesh);
  GridField coeff = mask_geometry(coeff_grid, *system.mesh);
  GridField res = residual_field(system, r_full, component, *locator);
  BranchInput in;
  in.scale = config.residual_ref_scale / (res.norm() + 1e-30);
  for (double& v : res.values) v *= in.scale;
  if (component == 1) {
    coeff = coeff.transposed();
    res = res.transposed();
  }
  in.values = branch_vector(coeff, res);
  return in;
}

SolveResult hints_solve(const AssembledSystem& system, const DeepONetParams& params, const GridField& coeff_grid,
                        const HintsConfig& config, const SolveReference* reference) {
  config.validate();
  const int nc = components(system.kind);
  if (params.arch.n_out != nc) {
    throw ConfigError("hints_solve: network has " + std::to_string(params.arch.n_out) + " outputs, problem needs " +
                      std::to_string(nc));
  }
  if (nc == 2 && !mirror_symmetric(system.mesh->geometry_tag)) {
    throw ConfigError("hints_solve: the elasticity correction needs a geometry symmetric about y = x");
  }
  const GridLocator locator(*system.mesh);

  // Free nodes (each carries nc consecutive reduced dofs) and their coordinates.
  std::vector<int> free_nodes;
  for (std::size_t r = 0; r < system.free_dofs.size(); r += nc) free_nodes.push_back(system.free_dofs[r].node);
  std::vector<Point> coords, mirrored;
  for (int node : free_nodes) {
    const Point p = system.mesh->nodes[node];
    coords.push_back(p);
    mirrored.push_back({p.y, p.x});
  }
  const DenseMatrix trunk = trunk_forward(params, coords);
  const DenseMatrix trunk_mirrored = nc == 2 ? trunk_forward(params, mirrored) : DenseMatrix();

  Recorder rec(system, config, reference);
  Vector u(system.size(), 0.0);
  if (rec.record(0, StepKind::Initial, u)) return {std::move(u), rec.take()};

  for (int t = 1; t <= config.max_iterations; ++t) {
    if (t % config.ratio != 0) {
      gauss_seidel_sweep(system.k, system.f, u);
      if (rec.record(t, StepKind::GaussSeidel, u)) break;
      continue;
    }
    const Vector r_full = system.scatter(residual(system.k, system.f, u));
    Vector delta(u.size(), 0.0);
    for (int comp = 0; comp < nc; ++comp) {
      const BranchInput in = residual_to_branch_input(system, r_full, coeff_grid, config, comp, &locator);
      if (in.values.tail(kGridPoints).isZero(0.0)) continue;
      const DenseMatrix pred = combine(params, branch_forward(params, in.values), comp == 0 ? trunk : trunk_mirrored);
      if (!pred.allFinite()) {
        throw NumericalError("hints_solve: non-finite DeepONet prediction at iteration " + std::to_string(t));
      }
      const double inv = 1.0 / (in.scale * config.output_scale);
      for (std::size_t q = 0; q < free_nodes.size(); ++q) {
        for (int c = 0; c < nc; ++c) {
          // A mirrored prediction returns its components swapped.
          const int src = comp == 0 ? c : 1 - c;
          delta[q * nc + c] += inv * pred(0, static_cast<Eigen::Index>(q) * nc + src);
        }
      }
    }
    for (std::size_t i = 0; i < u.size(); ++i) u[i] += delta[i];
    if (rec.record(t, StepKind::DeepONet, u)) break;
  }
  return {std::move(u), rec.take()};
}

void write_trace_csv(std::ostream& os, const HintsTrace& trace) {
  os << "iteration,step_kind,error_norm,residual_norm";
  for (int m : trace.tracked_modes) os << ",mode_" << m;
  os << '\n';
  char buf[32];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  };
  for (const auto& r : trace.records) {
    os << r.iteration << ',' << to_string(r.kind) << ',' << num(r.error_norm) << ',' << num(r.residual_norm);
    for (double m : r.mode_errors) os << ',' << num(m);
    os << '\n';
  }
}

}  // namespace hints
