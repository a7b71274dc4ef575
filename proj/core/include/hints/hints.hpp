#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "hints/deeponet.hpp"
#include "hints/fem.hpp"
#include "hints/field.hpp"
#include "hints/linalg.hpp"

namespace hints {

struct HintsConfig {
  int ratio = 10;               // every ratio-th iteration is a DeepONet step
  int max_iterations = 20000;
  double tolerance = 1e-12;     // on ||u* - u||_2 / max(1, ||u*||_2)
  /// Eigen-indices of the reduced K whose errors are recorded; negative
  /// values count from the end (-1 = highest mode). Empty disables tracking.
  std::vector<int> track_modes;
  /// Grid norm the residual channel is rescaled to before entering the
  /// network; the typical norm of a training load field.
  double residual_ref_scale = 3.1;
  /// Network outputs are solutions multiplied by this factor (set at
  /// training time so targets have unit RMS).
  double output_scale = 1.0;

  void validate() const;
};

/// {0, 1, 2, n/2, n-2, n-1}, deduplicated for small n.
std::vector<int> default_tracked_modes(int n);

enum class StepKind { Initial, GaussSeidel, DeepONet };
std::string_view to_string(StepKind kind);

struct TraceRecord {
  int iteration = 0;
  StepKind kind = StepKind::Initial;
  double error_norm = 0.0;
  double residual_norm = 0.0;
  std::vector<double> mode_errors;
};

struct HintsTrace {
  std::vector<TraceRecord> records;  // records[0] is the initial guess
  std::optional<int> converged_at;
  std::vector<int> tracked_modes;    // resolved, non-negative
  double threshold = 0.0;            // absolute error threshold actually used

  int iterations() const { return converged_at.value_or(static_cast<int>(records.size()) - 1); }
};

/// Exact solution (dense LU) and, optionally, the eigenbasis of the reduced
/// stiffness matrix. Shared between the methods run on one system.
struct SolveReference {
  Vector u_star;
  std::shared_ptr<const EigenBasis> basis;
};

SolveReference make_reference(const AssembledSystem& system, bool with_basis);

/// |v_i^T (u* - u)| for each tracked index. Throws ConfigError when an
/// index is out of range.
std::vector<double> mode_errors(const EigenBasis& basis, std::span<const double> u_star,
                                std::span<const double> u, std::span<const int> tracked);

struct SolveResult {
  Vector u;  // reduced layout
  HintsTrace trace;
};

/// Pure Gauss-Seidel from u = 0 until the tolerance or max_iterations.
SolveResult gs_solve(const AssembledSystem& system, const HintsConfig& config,
                     const SolveReference* reference = nullptr);

/// Network input of one DeepONet step.
struct BranchInput {
  Eigen::VectorXd values;  // 2 * 961, channel-major
  double scale = 1.0;      // residual channel was multiplied by this
};

/// Stacks two grid fields into one branch input vector.
Eigen::VectorXd branch_vector(const GridField& channel0, const GridField& channel1);

/// Nodal field r_i / area_i of one component of a full-layout residual,
/// sampled on the sensor grid with zero padding outside the domain.
GridField residual_field(const AssembledSystem& system, std::span<const double> r_full, int component,
                         const GridLocator& locator);

/// Channel 0 = coefficient field zero-padded to the geometry, channel 1 =
/// scale * residual field. For component 1 of an elasticity residual both
/// channels are mirrored across y = x, so that the network, which was
/// trained on x-directed loads, sees an x-directed problem.
BranchInput residual_to_branch_input(const AssembledSystem& system, std::span<const double> r_full,
                                     const GridField& coeff_grid, const HintsConfig& config, int component = 0,
                                     const GridLocator* locator = nullptr);

/// Hybrid iteration: GS sweeps with a DeepONet correction every
/// config.ratio-th iteration. `coeff_grid` is the raw coefficient field; it
/// is zero-padded to the mesh geometry here.
SolveResult hints_solve(const AssembledSystem& system, const DeepONetParams& params, const GridField& coeff_grid,
                        const HintsConfig& config, const SolveReference* reference = nullptr);

/// iteration,step_kind,error_norm,residual_norm,mode_<i>...
void write_trace_csv(std::ostream& os, const HintsTrace& trace);

}  // namespace hints
