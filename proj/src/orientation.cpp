#include "mto/orientation.hpp"

#include <algorithm>
#include <cmath>

namespace mto {

namespace {
// Guard for the sqrt derivative only; the forward map stays exact so the
// saturation invariants (minors, Cauchy-Schwarz bound) hold to rounding.
constexpr double kSqrtDerivGuard = 1e-12;
}

double smoothed_heaviside(double x, const HeavisideSpec& spec) {
  const double b = spec.beta;
  double v;
  switch (spec.variant) {
    case HeavisideVariant::Symmetric:
      v = 0.5 * (1.0 + std::tanh(b * x) / std::tanh(b));
      break;
    case HeavisideVariant::Standard:
    case HeavisideVariant::Shifted: {
      const double t0 = std::tanh(b * spec.eta);
      v = (t0 + std::tanh(b * (x - spec.eta))) / (t0 + std::tanh(b * (1.0 - spec.eta)));
      break;
    }
  }
  return std::clamp(v, 0.0, 1.0);
}

double smoothed_heaviside_deriv(double x, const HeavisideSpec& spec) {
  const double b = spec.beta;
  auto sech2 = [](double y) {
    const double c = std::cosh(y);
    return 1.0 / (c * c);
  };
  switch (spec.variant) {
    case HeavisideVariant::Symmetric:
      return 0.5 * b * sech2(b * x) / std::tanh(b);
    case HeavisideVariant::Standard:
    case HeavisideVariant::Shifted: {
      const double t0 = std::tanh(b * spec.eta);
      const double denom = t0 + std::tanh(b * (1.0 - spec.eta));
      // Zero where the forward map is clamped, so the derivative matches the
      // actual (flat) output there.
      const double v = (t0 + std::tanh(b * (x - spec.eta))) / denom;
      if (v < 0.0 || v > 1.0) return 0.0;
      return b * sech2(b * (x - spec.eta)) / denom;
    }
  }
  return 0.0;
}

std::array<double, 3> OrientationTensor::principal_minors() const {
  auto minor = [&](int i, int j) { return a(i, i) * a(j, j) - a(i, j) * a(i, j); };
  return {minor(1, 2), minor(0, 2), minor(0, 1)};
}

std::array<double, 3> project_diagonal(double q11, double q22, double /*q33*/) {
  const double a11 = q11;
  const double a22 = q22 * (1.0 - a11);
  return {a11, a22, 1.0 - a11 - a22};
}

double project_offdiagonal(double q_ij, double a_ii, double a_jj, const HeavisideSpec& spec) {
  HeavisideSpec s = spec;
  s.variant = HeavisideVariant::Symmetric;
  const double sgn = 2.0 * smoothed_heaviside(q_ij, s) - 1.0;
  return sgn * std::sqrt(std::max(a_ii * a_jj, 0.0));
}

OrientationTensor assemble_orientation(const std::array<double, 6>& q, const HeavisideSpec& htilde,
                                       int dim) {
  std::array<Eigen::Matrix3d, 6> unused;
  return assemble_orientation_jacobian(q, htilde, dim, unused);
}

OrientationTensor assemble_orientation_jacobian(const std::array<double, 6>& q,
                                                const HeavisideSpec& htilde, int dim,
                                                std::array<Eigen::Matrix3d, 6>& dadq) {
  HeavisideSpec hs = htilde;
  hs.variant = HeavisideVariant::Symmetric;

  for (auto& m : dadq) m.setZero();

  double a11, a22, a33;
  // d(a11,a22,a33)/d(q11,q22)
  double d11_dq11, d22_dq11, d33_dq11, d22_dq22, d33_dq22;
  if (dim == 2) {
    a11 = q[0];
    a22 = 1.0 - a11;
    a33 = 0.0;
    d11_dq11 = 1.0;
    d22_dq11 = -1.0;
    d33_dq11 = 0.0;
    d22_dq22 = 0.0;
    d33_dq22 = 0.0;
  } else {
    a11 = q[0];
    a22 = q[1] * (1.0 - a11);
    a33 = 1.0 - a11 - a22;
    d11_dq11 = 1.0;
    d22_dq11 = -q[1];
    d33_dq11 = q[1] - 1.0;
    d22_dq22 = 1.0 - a11;
    d33_dq22 = -(1.0 - a11);
  }

  OrientationTensor t;
  auto& a = t.a;
  a(0, 0) = a11;
  a(1, 1) = a22;
  a(2, 2) = a33;
  dadq[0](0, 0) = d11_dq11;
  dadq[0](1, 1) = d22_dq11;
  dadq[0](2, 2) = d33_dq11;
  dadq[1](1, 1) = d22_dq22;
  dadq[1](2, 2) = d33_dq22;

  // Off-diagonal slots: (i, j, q index), skipped out-of-plane in 2D.
  struct Slot {
    int i, j, s;
  };
  const std::array<Slot, 3> slots = {{{0, 1, 3}, {0, 2, 4}, {1, 2, 5}}};
  const double diag[3] = {a11, a22, a33};
  // ddiag[s](k): derivative of diag[k] w.r.t. q slot s (only slots 0 and 1).
  auto ddiag = [&](int s, int k) -> double {
    if (s == 0) return k == 0 ? d11_dq11 : (k == 1 ? d22_dq11 : d33_dq11);
    if (s == 1) return k == 1 ? d22_dq22 : (k == 2 ? d33_dq22 : 0.0);
    return 0.0;
  };

  for (const auto& sl : slots) {
    if (dim == 2 && sl.s != 3) continue;
    const double prod = std::max(diag[sl.i] * diag[sl.j], 0.0);
    const double root = std::sqrt(std::max(prod, kSqrtDerivGuard));
    const double sgn = 2.0 * smoothed_heaviside(q[sl.s], hs) - 1.0;
    const double val = sgn * std::sqrt(prod);
    a(sl.i, sl.j) = a(sl.j, sl.i) = val;

    // d a_ij / d q_s (own slot: through the Heaviside)
    const double dsgn = 2.0 * smoothed_heaviside_deriv(q[sl.s], hs);
    dadq[sl.s](sl.i, sl.j) = dadq[sl.s](sl.j, sl.i) = dsgn * std::sqrt(prod);

    // d a_ij / d q11, q22 (through the diagonal entries)
    for (int s = 0; s < 2; ++s) {
      const double dprod = ddiag(s, sl.i) * diag[sl.j] + diag[sl.i] * ddiag(s, sl.j);
      const double dval = sgn * 0.5 * dprod / root;
      dadq[s](sl.i, sl.j) += dval;
      dadq[s](sl.j, sl.i) += dval;
    }
  }
  return t;
}

BuildVector recover_build_vector(const OrientationTensor& t) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(t.a);
  BuildVector out;
  const auto& ev = es.eigenvalues();  // ascending
  out.p = es.eigenvectors().col(2);
  out.rank_deficient = std::abs(ev(1)) > 1e-6;
  out.ambiguous = (ev(2) - ev(1)) < 1e-6;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(out.p(i)) > 1e-12) {
      if (out.p(i) < 0) out.p = -out.p;
      break;
    }
  }
  return out;
}

}  // namespace mto
