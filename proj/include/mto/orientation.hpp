#pragma once

#include <array>

#include <Eigen/Dense>

namespace mto {

enum class HeavisideVariant {
  Standard,   // H on [0,1], threshold eta
  Shifted,    // H-hat: nonnegative normalized argument, threshold eta, H(0) = 0
  Symmetric,  // H-tilde on [-1,1], centered at 0, H(0) = 1/2
};

struct HeavisideSpec {
  double beta = 8.0;
  double eta = 0.5;
  HeavisideVariant variant = HeavisideVariant::Standard;
};

/// Smoothed Heaviside projection, monotone, output in [0,1].
double smoothed_heaviside(double x, const HeavisideSpec& spec);
double smoothed_heaviside_deriv(double x, const HeavisideSpec& spec);

/// Second order orientation tensor a = p⊗p (trace 1, rank 1 at saturation).
struct OrientationTensor {
  Eigen::Matrix3d a = Eigen::Matrix3d::Zero();

  double trace() const { return a.trace(); }
  /// Principal 2x2 minors M_11, M_22, M_33 (complementary-index minors).
  std::array<double, 3> principal_minors() const;
};

/// Cube-to-simplex (stick-breaking) map for the diagonal entries.
/// a11 = q11, a22 = q22 (1 - a11), a33 = 1 - a11 - a22. Trace-1 by construction.
std::array<double, 3> project_diagonal(double q11, double q22, double q33);

/// Off-diagonal map a_ij = (2 H~(q_ij) - 1) sqrt(a_ii a_jj).
double project_offdiagonal(double q_ij, double a_ii, double a_jj, const HeavisideSpec& spec);

/// Full map q -> a. q order: (q11, q22, q33, q12, q13, q23).
/// In 2D the diagonal projection collapses to the 2-simplex (a22 = 1 - a11,
/// a33 = 0) and the out-of-plane couplings are zero.
OrientationTensor assemble_orientation(const std::array<double, 6>& q, const HeavisideSpec& htilde,
                                       int dim);

/// assemble_orientation together with da/dq_s for every q slot.
OrientationTensor assemble_orientation_jacobian(const std::array<double, 6>& q,
                                                const HeavisideSpec& htilde, int dim,
                                                std::array<Eigen::Matrix3d, 6>& dadq);

struct BuildVector {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  bool rank_deficient = false;  // second eigenvalue not negligible
  bool ambiguous = false;       // dominant eigenvalue nearly repeated
};

/// Dominant eigenvector of a, sign-normalized so the first nonzero entry is
/// positive. Reporting only; flags degeneracies instead of failing.
BuildVector recover_build_vector(const OrientationTensor& a);

}  // namespace mto
