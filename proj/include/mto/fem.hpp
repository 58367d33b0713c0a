#pragma once

#include <map>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>

#include "mto/mesh.hpp"

namespace mto {

/// Thrown when the equilibrium system cannot be solved to tolerance.
struct SolveError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Strain-displacement sampling for the square bilinear quad / trilinear hex:
/// B-matrices at the 2x2(x2) Gauss points and at the centroid, with quadrature
/// weights including the Jacobian determinant. Voigt rows (11,22,12) in 2D and
/// (11,22,33,23,13,12) in 3D, engineering shear.
class ElementMatrixCache {
 public:
  ElementMatrixCache(int dim, double element_size);

  int dim() const { return dim_; }
  int num_gauss() const { return static_cast<int>(B_.size()); }
  const Eigen::MatrixXd& B(int g) const { return B_[g]; }
  double weight(int g) const { return w_[g]; }
  const Eigen::MatrixXd& centroid_B() const { return Bc_; }

  /// Ke = sum_g w_g B_g^T C B_g for an element-constant material tensor.
  Eigen::MatrixXd element_matrix(const Eigen::MatrixXd& C) const;

 private:
  int dim_;
  std::vector<Eigen::MatrixXd> B_;
  std::vector<double> w_;
  Eigen::MatrixXd Bc_;
};

/// Sparse equilibrium solver on the free DOFs with a precomputed sparsity
/// pattern and element-to-storage scatter map, so refactorizing for new
/// element tensors never re-allocates. Element matrices are formed as linear
/// combinations of a small set of reference matrices. 2D systems use a direct
/// LDLT factorization; 3D systems use conjugate gradients with an incomplete
/// Cholesky preconditioner (both verified against the same residual bound).
class EquilibriumSolver {
 public:
  explicit EquilibriumSolver(const Mesh& mesh);

  /// Element matrix for e is sum_r coef[e * ref.size() + r] * ref[r].
  /// Rebuilds the matrix values and refactorizes. A factorization failure is
  /// recorded and reported by the next solve().
  void factorize(const std::vector<Eigen::MatrixXd>& ref, const std::vector<double>& coef);

  /// Solve for one load case; returns the full displacement vector with fixed
  /// DOFs at zero. An optional guess warm-starts the iterative path. Throws
  /// SolveError if the factorization failed or the relative residual
  /// exceeds 1e-8.
  Eigen::VectorXd solve(const Eigen::VectorXd& f_full) const;
  Eigen::VectorXd solve(const Eigen::VectorXd& f_full, const Eigen::VectorXd& guess_full) const;
  Eigen::VectorXd solve(const std::map<int, double>& loads) const;

  int num_free_dofs() const { return n_free_; }
  const Eigen::SparseMatrix<double>& matrix() const { return K_; }
  /// Free-DOF index for a full DOF, -1 if fixed.
  int free_index(int dof) const { return full2free_[dof]; }

 private:
  Eigen::VectorXd solve_impl(const Eigen::VectorXd& f_full, const Eigen::VectorXd* guess) const;

  const Mesh& mesh_;
  bool direct_;
  int n_free_ = 0;
  std::vector<int> full2free_;
  Eigen::SparseMatrix<double> K_;
  std::vector<int> slot_;  // [e * ndof^2 + a * ndof + b] -> value index, -1 fixed
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                           Eigen::IncompleteCholesky<double, Eigen::Lower, Eigen::AMDOrdering<int>>>
      cg_;
  bool factorized_ = false;
  bool factor_ok_ = false;
};

/// Von Mises magnitude of a Voigt stress vector (plane stress in 2D).
double von_mises_voigt(const Eigen::VectorXd& sigma, int dim);

struct SolutionBundle {
  std::vector<Eigen::VectorXd> u;       // per load case, full DOF vectors
  std::vector<double> case_compliance;  // 1/2 f.u per case
  double compliance = 0;                // summed over cases
  std::vector<Eigen::MatrixXd> strain;  // per case, elements x voigt (centroid)
  std::vector<Eigen::MatrixXd> stress;  // per case, relaxed centroid stress
  std::vector<std::vector<double>> von_mises;  // per case, per element
};

/// Solve every load case of the mesh with an already-factorized solver and
/// record displacements and compliances.
SolutionBundle solve_load_cases(const Mesh& mesh, const EquilibriumSolver& solver);

/// Centroid strain/stress recovery: sigma_e = relax[e] * C_e * B_c * u_e with
/// C_e = sum_r scoef[e * Cref.size() + r] * Cref[r]. Fills strain, stress and
/// von_mises for every load case already solved in `sol`.
void recover_stresses(const Mesh& mesh, const ElementMatrixCache& cache,
                      const std::vector<Eigen::MatrixXd>& Cref,
                      const std::vector<double>& scoef, const std::vector<double>& relax,
                      SolutionBundle& sol);

}  // namespace mto
