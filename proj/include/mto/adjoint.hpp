#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>

#include "mto/constraints.hpp"
#include "mto/elasticity.hpp"
#include "mto/fem.hpp"
#include "mto/fields.hpp"
#include "mto/problem.hpp"

namespace mto {

struct EvalSettings {
  double beta = 8.0;        // projection sharpness (continuation value)
  bool with_stress = true;  // recover stresses and aggregate g2
};

/// Everything produced by one forward pass at a design state: filtered
/// fields, interface indicator, per-component rotated tensors, the
/// element-tensor combination coefficients, and the equilibrium solution
/// with the objective and constraint values.
struct Evaluation {
  EvalSettings settings;
  FilteredFields fields;
  InterfaceField iface;
  std::vector<OrientationTensor> atens;              // per component
  std::vector<std::array<Eigen::Matrix3d, 6>> ajac;  // da/dq per component
  std::vector<Mat6> C6r;                             // rotated 6x6 per component
  std::vector<Eigen::MatrixXd> Cvoigt;  // mesh-dimensional tensors: K rotated + joint
  std::vector<Eigen::MatrixXd> Keref;   // reference element matrices: K rotated + joint
  std::vector<double> wdmo;             // [e * K + k]
  std::vector<double> Jdmo;             // [e * K * K + k * K + l]
  std::vector<double> coef;             // stiffness combination [e * (K+1) + r]
  std::vector<double> scoef;            // stress combination [e * (K+1) + r]
  std::vector<double> relax;            // sqrt(rho_tilde), zero on masked elements
  SolutionBundle sol;
  double F = 0;
  double g1 = 0;
  ConstraintValues cons;
};

/// Design-space gradients packed per DesignVectorLayout.
struct SensitivityBundle {
  Eigen::VectorXd dF;
  Eigen::VectorXd dg1;
  Eigen::VectorXd dg2;
};

enum class Functional { Compliance, Volume, StressAggregate };

/// Forward evaluation and adjoint gradients for one problem. Owns the
/// filter, gradient sampler, element cache and equilibrium solver, and
/// warm-starts iterative solves from the previous call. The problem must
/// outlive the evaluator.
class Evaluator {
 public:
  explicit Evaluator(const Problem& pb);

  const DesignVectorLayout& layout() const { return layout_; }

  Evaluation evaluate(const DesignState& s, const EvalSettings& settings);

  /// Gradients of F, g1 and (when evaluated with stress) g2. `ev` must come
  /// from the most recent evaluate() call on this instance so the factorized
  /// equilibrium operator still matches its coefficients.
  SensitivityBundle sensitivities(const Evaluation& ev);

 private:
  struct Seeds;
  void accumulate_stiffness_terms(double gamma, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& y, const Evaluation& ev,
                                  Seeds& sd) const;
  Eigen::VectorXd chain_design_gradient(const Seeds& sd, const Evaluation& ev) const;

  const Problem& pb_;
  DesignVectorLayout layout_;
  HelmholtzFilter filter_;
  GradientSampler sampler_;
  ElementMatrixCache cache_;
  EquilibriumSolver solver_;
  StiffnessTensor Ct6_;
  RotationCoefficients Brot_;
  StiffnessTensor CJ_;     // mesh-dimensional joint tensor
  Eigen::MatrixXd KeJ_;    // joint reference element matrix
  std::vector<Eigen::VectorXd> u_prev_;    // warm starts, per load case
  std::vector<Eigen::VectorXd> adj_prev_;  // adjoint warm starts, per load case
};

/// Central finite difference of one functional with respect to one packed
/// design variable, running the full forward pipeline at x +- step. Throws
/// std::domain_error when the sample is not at least `step` inside its box
/// bounds, std::invalid_argument for a stress functional evaluated without
/// stress recovery.
double fd_derivative(const Problem& pb, const DesignState& s, const EvalSettings& settings,
                     Functional which, int packed_index, double step);

}  // namespace mto
