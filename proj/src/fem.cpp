#include "mto/fem.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mto {

namespace {

// Corner signs (xi_a, eta_a, zeta_a) matching the mesh node ordering.
constexpr int kCornerQ4[4][2] = {{-1, -1}, {1, -1}, {1, 1}, {-1, 1}};
constexpr int kCornerH8[8][3] = {{-1, -1, -1}, {1, -1, -1}, {1, 1, -1}, {-1, 1, -1},
                                 {-1, -1, 1},  {1, -1, 1},  {1, 1, 1},  {-1, 1, 1}};

Eigen::MatrixXd strain_matrix(int dim, double h, const double* xi) {
  const int npe = dim == 3 ? 8 : 4;
  const int ns = dim == 3 ? 6 : 3;
  // d/dx = (2/h) d/dxi on the square/cube of edge h.
  Eigen::MatrixXd dN(npe, dim);
  for (int a = 0; a < npe; ++a) {
    if (dim == 2) {
      const auto& s = kCornerQ4[a];
      dN(a, 0) = 0.25 * s[0] * (1 + s[1] * xi[1]) * 2 / h;
      dN(a, 1) = 0.25 * s[1] * (1 + s[0] * xi[0]) * 2 / h;
    } else {
      const auto& s = kCornerH8[a];
      dN(a, 0) = 0.125 * s[0] * (1 + s[1] * xi[1]) * (1 + s[2] * xi[2]) * 2 / h;
      dN(a, 1) = 0.125 * s[1] * (1 + s[0] * xi[0]) * (1 + s[2] * xi[2]) * 2 / h;
      dN(a, 2) = 0.125 * s[2] * (1 + s[0] * xi[0]) * (1 + s[1] * xi[1]) * 2 / h;
    }
  }
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(ns, npe * dim);
  for (int a = 0; a < npe; ++a) {
    if (dim == 2) {
      B(0, 2 * a) = dN(a, 0);
      B(1, 2 * a + 1) = dN(a, 1);
      B(2, 2 * a) = dN(a, 1);
      B(2, 2 * a + 1) = dN(a, 0);
    } else {
      B(0, 3 * a) = dN(a, 0);
      B(1, 3 * a + 1) = dN(a, 1);
      B(2, 3 * a + 2) = dN(a, 2);
      B(3, 3 * a + 1) = dN(a, 2);
      B(3, 3 * a + 2) = dN(a, 1);
      B(4, 3 * a) = dN(a, 2);
      B(4, 3 * a + 2) = dN(a, 0);
      B(5, 3 * a) = dN(a, 1);
      B(5, 3 * a + 1) = dN(a, 0);
    }
  }
  return B;
}

}  // namespace

ElementMatrixCache::ElementMatrixCache(int dim, double element_size) : dim_(dim) {
  const double g = 1.0 / std::sqrt(3.0);
  const double detJ = std::pow(element_size / 2.0, dim);
  if (dim == 2) {
    for (int j = 0; j < 2; ++j)
      for (int i = 0; i < 2; ++i) {
        const double xi[2] = {i ? g : -g, j ? g : -g};
        B_.push_back(strain_matrix(2, element_size, xi));
        w_.push_back(detJ);
      }
  } else {
    for (int k = 0; k < 2; ++k)
      for (int j = 0; j < 2; ++j)
        for (int i = 0; i < 2; ++i) {
          const double xi[3] = {i ? g : -g, j ? g : -g, k ? g : -g};
          B_.push_back(strain_matrix(3, element_size, xi));
          w_.push_back(detJ);
        }
  }
  const double center[3] = {0, 0, 0};
  Bc_ = strain_matrix(dim, element_size, center);
}

Eigen::MatrixXd ElementMatrixCache::element_matrix(const Eigen::MatrixXd& C) const {
  const auto n = B_[0].cols();
  Eigen::MatrixXd Ke = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t g = 0; g < B_.size(); ++g) Ke += w_[g] * B_[g].transpose() * C * B_[g];
  return Ke;
}

EquilibriumSolver::EquilibriumSolver(const Mesh& mesh) : mesh_(mesh), direct_(mesh.dim == 2) {
  const int ndof = mesh.num_dofs();
  full2free_.assign(ndof, 0);
  for (int d : mesh.fixed_dofs) full2free_[d] = -1;
  for (int d = 0; d < ndof; ++d)
    if (full2free_[d] >= 0) full2free_[d] = n_free_++;

  const int nde = mesh.dofs_per_element();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(mesh.num_elements()) * nde * nde);
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const auto dofs = mesh.element_dofs(e);
    for (int a = 0; a < nde; ++a) {
      const int fi = full2free_[dofs[a]];
      if (fi < 0) continue;
      for (int b = 0; b < nde; ++b) {
        const int fj = full2free_[dofs[b]];
        if (fj >= 0) trips.emplace_back(fi, fj, 0.0);
      }
    }
  }
  K_.resize(n_free_, n_free_);
  K_.setFromTriplets(trips.begin(), trips.end());
  K_.makeCompressed();

  slot_.assign(static_cast<std::size_t>(mesh.num_elements()) * nde * nde, -1);
  const int* outer = K_.outerIndexPtr();
  const int* inner = K_.innerIndexPtr();
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const auto dofs = mesh.element_dofs(e);
    for (int a = 0; a < nde; ++a) {
      const int fi = full2free_[dofs[a]];
      if (fi < 0) continue;
      for (int b = 0; b < nde; ++b) {
        const int fj = full2free_[dofs[b]];
        if (fj < 0) continue;
        const int* lo = inner + outer[fj];
        const int* hi = inner + outer[fj + 1];
        const int* it = std::lower_bound(lo, hi, fi);
        slot_[(static_cast<std::size_t>(e) * nde + a) * nde + b] =
            static_cast<int>(it - inner);
      }
    }
  }
  if (direct_) {
    ldlt_.analyzePattern(K_);
  } else {
    cg_.setTolerance(1e-12);
    cg_.setMaxIterations(2 * n_free_);
  }
}

void EquilibriumSolver::factorize(const std::vector<Eigen::MatrixXd>& ref,
                                  const std::vector<double>& coef) {
  const int nde = mesh_.dofs_per_element();
  const int R = static_cast<int>(ref.size());
  double* vals = K_.valuePtr();
  std::fill(vals, vals + K_.nonZeros(), 0.0);
  Eigen::MatrixXd Ke(nde, nde);
  for (int e = 0; e < mesh_.num_elements(); ++e) {
    Ke.setZero();
    for (int r = 0; r < R; ++r) {
      const double c = coef[static_cast<std::size_t>(e) * R + r];
      if (c != 0.0) Ke += c * ref[r];
    }
    const int* slots = slot_.data() + static_cast<std::size_t>(e) * nde * nde;
    for (int a = 0; a < nde; ++a)
      for (int b = 0; b < nde; ++b) {
        const int s = slots[a * nde + b];
        if (s >= 0) vals[s] += Ke(a, b);
      }
  }
  if (direct_) {
    ldlt_.factorize(K_);
    factor_ok_ = ldlt_.info() == Eigen::Success;
  } else {
    cg_.compute(K_);
    factor_ok_ = cg_.info() == Eigen::Success;
  }
  factorized_ = true;
}

Eigen::VectorXd EquilibriumSolver::solve_impl(const Eigen::VectorXd& f_full,
                                              const Eigen::VectorXd* guess) const {
  if (!factorized_) throw SolveError("equilibrium solve requested before factorization");
  if (!factor_ok_) throw SolveError("stiffness factorization failed (matrix not positive definite)");
  Eigen::VectorXd b(n_free_);
  b.setZero();
  for (int d = 0; d < f_full.size(); ++d)
    if (full2free_[d] >= 0) b[full2free_[d]] = f_full[d];
  Eigen::VectorXd u_full = Eigen::VectorXd::Zero(mesh_.num_dofs());
  const double bn = b.norm();
  if (bn == 0.0) return u_full;
  Eigen::VectorXd y;
  if (direct_) {
    y = ldlt_.solve(b);
  } else if (guess) {
    Eigen::VectorXd y0(n_free_);
    y0.setZero();
    for (int d = 0; d < guess->size(); ++d)
      if (full2free_[d] >= 0) y0[full2free_[d]] = (*guess)[d];
    y = cg_.solveWithGuess(b, y0);
  } else {
    y = cg_.solve(b);
  }
  const double res = (K_ * y - b).norm() / bn;
  if (!(res <= 1e-8)) {
    std::string msg = "equilibrium residual " + std::to_string(res) + " exceeds 1e-8";
    if (!direct_)
      msg += " after " + std::to_string(cg_.iterations()) + " CG iterations";
    throw SolveError(msg);
  }
  for (int d = 0; d < f_full.size(); ++d)
    if (full2free_[d] >= 0) u_full[d] = y[full2free_[d]];
  return u_full;
}

Eigen::VectorXd EquilibriumSolver::solve(const Eigen::VectorXd& f_full) const {
  return solve_impl(f_full, nullptr);
}

Eigen::VectorXd EquilibriumSolver::solve(const Eigen::VectorXd& f_full,
                                         const Eigen::VectorXd& guess_full) const {
  return solve_impl(f_full, &guess_full);
}

Eigen::VectorXd EquilibriumSolver::solve(const std::map<int, double>& loads) const {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(mesh_.num_dofs());
  for (const auto& [dof, val] : loads) f[dof] += val;
  return solve(f);
}

double von_mises_voigt(const Eigen::VectorXd& s, int dim) {
  if (dim == 2) {
    return std::sqrt(s[0] * s[0] - s[0] * s[1] + s[1] * s[1] + 3.0 * s[2] * s[2]);
  }
  const double d01 = s[0] - s[1], d12 = s[1] - s[2], d20 = s[2] - s[0];
  return std::sqrt(0.5 * (d01 * d01 + d12 * d12 + d20 * d20) +
                   3.0 * (s[3] * s[3] + s[4] * s[4] + s[5] * s[5]));
}

SolutionBundle solve_load_cases(const Mesh& mesh, const EquilibriumSolver& solver) {
  SolutionBundle sol;
  for (const auto& lc : mesh.load_cases) {
    Eigen::VectorXd u = solver.solve(lc);
    double fu = 0;
    for (const auto& [dof, val] : lc) fu += val * u[dof];
    sol.case_compliance.push_back(0.5 * fu);
    sol.compliance += 0.5 * fu;
    sol.u.push_back(std::move(u));
  }
  return sol;
}

void recover_stresses(const Mesh& mesh, const ElementMatrixCache& cache,
                      const std::vector<Eigen::MatrixXd>& Cref,
                      const std::vector<double>& scoef, const std::vector<double>& relax,
                      SolutionBundle& sol) {
  const int nde = mesh.dofs_per_element();
  const int ns = mesh.dim == 3 ? 6 : 3;
  const int R = static_cast<int>(Cref.size());
  const Eigen::MatrixXd& Bc = cache.centroid_B();
  sol.strain.assign(sol.u.size(), Eigen::MatrixXd::Zero(mesh.num_elements(), ns));
  sol.stress.assign(sol.u.size(), Eigen::MatrixXd::Zero(mesh.num_elements(), ns));
  sol.von_mises.assign(sol.u.size(), std::vector<double>(mesh.num_elements(), 0.0));
  Eigen::VectorXd ue(nde);
  Eigen::MatrixXd Ce(ns, ns);
  for (std::size_t c = 0; c < sol.u.size(); ++c) {
    for (int e = 0; e < mesh.num_elements(); ++e) {
      const auto dofs = mesh.element_dofs(e);
      for (int a = 0; a < nde; ++a) ue[a] = sol.u[c][dofs[a]];
      Eigen::VectorXd eps = Bc * ue;
      Ce.setZero();
      for (int r = 0; r < R; ++r) {
        const double w = scoef[static_cast<std::size_t>(e) * R + r];
        if (w != 0.0) Ce += w * Cref[r];
      }
      Eigen::VectorXd sig = relax[e] * (Ce * eps);
      sol.strain[c].row(e) = eps.transpose();
      sol.stress[c].row(e) = sig.transpose();
      sol.von_mises[c][e] = von_mises_voigt(sig, mesh.dim);
    }
  }
}

}  // namespace mto
