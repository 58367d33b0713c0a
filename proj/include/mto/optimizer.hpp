#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mto/adjoint.hpp"
#include "mto/problem.hpp"

namespace mto {

/// Moving-asymptote memory for one design vector. Asymptotes always bracket
/// the iterate strictly; the previous two iterates drive the standard
/// oscillation heuristic (shrink 0.7 / grow 1.2, initial spread half the box
/// range). `relaxed` reports that the last subproblem could only be solved
/// with its constraint-violation slack engaged.
struct MmaState {
  int iter = 0;  // completed accepted steps
  Eigen::VectorXd low, upp;
  Eigen::VectorXd xold1, xold2;
  Eigen::VectorXd move;  // absolute per-variable move limit
  Eigen::VectorXd lam;   // dual warm start, sized to the constraint count
  double kkt_tol = 1e-9;
  bool relaxed = false;

  static MmaState create(int n, const Eigen::VectorXd& move);
};

/// One update of the Method of Moving Asymptotes: builds the separable
/// convex approximation of (F, g) around x and solves its subproblem through
/// the dual to the state's KKT tolerance. Constraint rows of dg pair with
/// gval (feasible when <= 0); gval may be empty. The returned iterate
/// respects [lo, hi] and the per-variable move limit exactly.
/// Throws std::invalid_argument on non-finite input or mismatched sizes.
Eigen::VectorXd mma_step(const Eigen::VectorXd& x, double F, const Eigen::VectorXd& dF,
                         const Eigen::VectorXd& gval, const Eigen::MatrixXd& dg,
                         const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, MmaState& st);

/// Fraction of intermediate density, 4 rho_tilde (1 - rho_tilde) averaged
/// over the active volume: 0 for a crisp 0/1 field, 1 for all-gray.
double gray_level(const Evaluation& ev, const Mesh& mesh);

/// Mean over solid elements (rho_tilde > 0.5) of 1 - max_k w_k / sum_l w_l:
/// 0 when every solid element is firmly one component.
double membership_discreteness(const Evaluation& ev, const Mesh& mesh);

enum class RunStatus { Converged, MaxIterations, SolverFailure };

struct IterationRow {
  int iter = 0;  // 1-based
  double F = 0;
  double g1 = 0;
  double g2 = 0;
  double max_interface_stress = 0;
  double gray = 0;
  double membership_disc = 0;
  double beta = 0;
  double wall_ms = 0;  // kept out of the convergence CSV
};

/// Complete record of one optimization run: per-iteration diagnostics, the
/// final design, and enough metadata to reproduce the run bit for bit.
struct RunRecord {
  std::uint64_t seed = 0;
  RunStatus status = RunStatus::MaxIterations;
  bool feasible = false;  // g1 and g2 within 1e-3 at the last iterate
  std::string error;      // nonempty only for SolverFailure
  std::vector<IterationRow> history;
  DesignState final_state;

  double final_F() const { return history.empty() ? 0.0 : history.back().F; }
  nlohmann::json to_json() const;
};

/// CSV with one row per iteration (header included); excludes wall time so
/// identical (config, seed) runs emit identical bytes.
std::string convergence_csv(const RunRecord& rec);

/// Full optimization loop: filter/project -> tensors -> equilibrium ->
/// functionals -> adjoints -> MMA step, with sharpness continuation gated on
/// feasibility and the interface-stress constraint entering after the
/// configured warm-up. Terminates once the relative objective change stays
/// below obj_tol for five consecutive iterates at the final sharpness, or at
/// max_iter. Equation-solver failures truncate the record with an error
/// status instead of throwing.
RunRecord run_optimization(const Problem& pb, std::uint64_t seed);

/// Density-only reference path: identical loop, filter, projection and
/// continuation, but the design vector is just rho, with the single
/// component's membership pinned to one. Requires K == 1.
RunRecord run_reference_simp(const Problem& pb, std::uint64_t seed);

struct MultiStartResult {
  int best = -1;  // index into records; -1 when every start failed
  std::vector<RunRecord> records;

  const RunRecord& best_record() const;  // throws std::runtime_error if best < 0
};

/// Independent runs with seeds rng_seed .. rng_seed + n_starts - 1, executed
/// on up to MTO_THREADS workers (default: hardware concurrency). Picks the
/// feasible record with the lowest objective, falling back to the lowest
/// objective overall when none is feasible.
MultiStartResult multi_start(const Problem& pb, int n_starts);

}  // namespace mto
