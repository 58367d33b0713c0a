#pragma once

#include <span>
#include <vector>

#include <Eigen/Sparse>

#include "mto/elasticity.hpp"
#include "mto/mesh.hpp"
#include "mto/orientation.hpp"
#include "mto/problem.hpp"

namespace mto {

/// Relative void stiffness floor.
constexpr double kRhoMin = 1e-6;

inline double simp_scale(double rho_tilde, double p) {
  return kRhoMin + (1.0 - kRhoMin) * std::pow(rho_tilde, p);
}
inline double simp_scale_deriv(double rho_tilde, double p) {
  return (1.0 - kRhoMin) * p * std::pow(rho_tilde, p - 1.0);
}

/// Screened-Poisson smoothing of element fields over the active subgrid with
/// zero-flux boundaries: (I - r^2 lap) x_s = x, r = radius/(2*sqrt(3)).
/// Self-adjoint, so apply() is also the transpose. Inactive elements pass
/// through unchanged.
class HelmholtzFilter {
 public:
  HelmholtzFilter(const Mesh& mesh, double radius);

  std::vector<double> apply(const std::vector<double>& x) const;

 private:
  bool identity_ = false;
  std::vector<int> a2e_;
  std::vector<int> e2a_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
};

/// Centroid gradients of an element field: elements are averaged to nodes
/// (active adjacency only), then differentiated with the element shape
/// functions at the centroid. apply_transpose is the exact adjoint.
class GradientSampler {
 public:
  explicit GradientSampler(const Mesh& mesh);

  /// x: per-element scalars -> per-element gradient, layout [e * dim + c].
  std::vector<double> apply(const std::vector<double>& x) const;
  std::vector<double> apply_transpose(const std::vector<double>& gbar) const;

 private:
  const Mesh& mesh_;
  std::vector<double> inv_count_;  // per node: 1 / (active adjacent elements)
};

/// w_k = m_k^P * prod_{j != k} (1 - m_j^P).
void dmo_weights(std::span<const double> m, double p, std::span<double> w);
/// J[k * K + l] = dw_k / dm_l.
void dmo_weights_jacobian(std::span<const double> m, double p, std::span<double> w,
                          std::span<double> J);

struct FilteredFields {
  int K = 1;
  std::vector<double> rho_filt;    // filtered, pre-projection
  std::vector<double> m_filt;      // [e * K + k]
  std::vector<double> rho_tilde;   // projected
  std::vector<double> m_tilde;     // [e * K + k]
  std::vector<double> grad_cache;  // gradients of rho_tilde^p * m_tilde_k,
                                   // layout [(e * K + k) * dim + c]
};

FilteredFields compute_filtered_fields(const DesignState& s, const Mesh& mesh,
                                       const HelmholtzFilter& filter,
                                       const GradientSampler& sampler, double simp_p,
                                       const HeavisideSpec& projection);

struct InterfaceField {
  std::vector<double> I;
  std::vector<double> raw;  // pre-projection pair sum
  double reference = 1.0;
};

/// raw_e = sum_{i > j} |grad f_i|^2 |grad f_j|^2 over the cached gradients,
/// normalized by the sharp-interface reference (0.25/h)^4 and projected.
InterfaceField interface_indicator(const FilteredFields& f, const Mesh& mesh,
                                   const HeavisideSpec& spec);

StiffnessTensor combined_base_tensor(double rho_tilde, std::span<const double> w,
                                     const std::vector<StiffnessTensor>& Cr, double simp_p);

StiffnessTensor combined_stiffness(const StiffnessTensor& CB, const StiffnessTensor& CJ,
                                   double I);

}  // namespace mto
