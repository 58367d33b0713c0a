#include "mto/elasticity.hpp"

#include <array>
#include <iostream>

namespace mto {

namespace {

// Voigt index pairs, order (11, 22, 33, 23, 13, 12).
constexpr std::array<std::array<int, 2>, 6> kVoigt = {{{0, 0}, {1, 1}, {2, 2}, {1, 2}, {0, 2}, {0, 1}}};

inline double kron(int i, int j) { return i == j ? 1.0 : 0.0; }

}  // namespace

double StiffnessTensor::min_eigenvalue() const {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (C + C.transpose()));
  return es.eigenvalues().minCoeff();
}

StiffnessTensor transverse_from_engineering(const MaterialSpec& spec) {
  if (spec.E1 <= 0 || spec.E2 <= 0 || spec.G12 <= 0)
    throw StabilityError("material moduli must be positive");
  if (spec.E1 >= spec.E2)
    std::cerr << "warning: E1 >= E2 (build direction not the compliant axis)\n";

  const double G23 = spec.E2 / (2.0 * (1.0 + spec.nu23));
  Mat6 S = Mat6::Zero();
  S(0, 0) = 1.0 / spec.E1;
  S(1, 1) = S(2, 2) = 1.0 / spec.E2;
  S(0, 1) = S(1, 0) = S(0, 2) = S(2, 0) = -spec.nu21 / spec.E2;
  S(1, 2) = S(2, 1) = -spec.nu23 / spec.E2;
  S(3, 3) = 1.0 / G23;
  S(4, 4) = S(5, 5) = 1.0 / spec.G12;

  Eigen::SelfAdjointEigenSolver<Mat6> es(S);
  const double smax = S.cwiseAbs().maxCoeff();
  if (es.eigenvalues().minCoeff() <= 1e-12 * smax)
    throw StabilityError("compliance matrix is not positive definite for the given constants");

  StiffnessTensor out;
  out.C = S.inverse();
  out.C = 0.5 * (out.C + Eigen::MatrixXd(out.C.transpose()));
  out.role = TensorRole::TransverseBase;
  return out;
}

RotationCoefficients rotation_coefficients(const StiffnessTensor& Ct) {
  if (Ct.role != TensorRole::TransverseBase || Ct.voigt_size() != 6)
    throw std::invalid_argument("rotation_coefficients expects a 6x6 transverse-base tensor");
  const auto& C = Ct.C;
  RotationCoefficients B;
  B.B1 = C(0, 0) + C(1, 1) - 2.0 * C(0, 1) - 4.0 * C(4, 4);
  B.B2 = C(0, 1) - C(1, 2);
  B.B3 = C(4, 4) + (C(1, 2) - C(1, 1)) / 2.0;
  B.B4 = C(1, 2);
  B.B5 = (C(1, 1) - C(1, 2)) / 2.0;
  return B;
}

StiffnessTensor rotate_tensor(const RotationCoefficients& B, const Mat3& a) {
  Mat6 C;
  for (int A = 0; A < 6; ++A) {
    const int i = kVoigt[A][0], j = kVoigt[A][1];
    for (int Bv = A; Bv < 6; ++Bv) {
      const int k = kVoigt[Bv][0], l = kVoigt[Bv][1];
      const double v = B.B1 * a(i, j) * a(k, l) +
                       B.B2 * (a(i, j) * kron(k, l) + a(k, l) * kron(i, j)) +
                       B.B3 * (a(i, k) * kron(j, l) + a(i, l) * kron(j, k) +
                               a(j, k) * kron(i, l) + a(j, l) * kron(i, k)) +
                       B.B4 * kron(i, j) * kron(k, l) +
                       B.B5 * (kron(i, k) * kron(j, l) + kron(i, l) * kron(j, k));
      C(A, Bv) = v;
      C(Bv, A) = v;
    }
  }
  return StiffnessTensor{C, TensorRole::Rotated};
}

Mat6 rotate_tensor_dir(const RotationCoefficients& B, const Mat3& a, const Mat3& da) {
  Mat6 dC;
  for (int A = 0; A < 6; ++A) {
    const int i = kVoigt[A][0], j = kVoigt[A][1];
    for (int Bv = A; Bv < 6; ++Bv) {
      const int k = kVoigt[Bv][0], l = kVoigt[Bv][1];
      const double v = B.B1 * (da(i, j) * a(k, l) + a(i, j) * da(k, l)) +
                       B.B2 * (da(i, j) * kron(k, l) + da(k, l) * kron(i, j)) +
                       B.B3 * (da(i, k) * kron(j, l) + da(i, l) * kron(j, k) +
                               da(j, k) * kron(i, l) + da(j, l) * kron(i, k));
      dC(A, Bv) = v;
      dC(Bv, A) = v;
    }
  }
  return dC;
}

StiffnessTensor joint_tensor(const JointSpec& spec, int dim) {
  if (spec.Ej <= 0 || spec.nu_j < 0 || spec.nu_j >= 0.5)
    throw StabilityError("joint spec requires Ej > 0 and 0 <= nu_j < 0.5");
  StiffnessTensor out;
  out.role = TensorRole::Joint;
  if (dim == 2) {
    const double f = spec.Ej / (1.0 - spec.nu_j * spec.nu_j);
    Mat3 C = Mat3::Zero();
    C(0, 0) = C(1, 1) = f;
    C(0, 1) = C(1, 0) = f * spec.nu_j;
    C(2, 2) = f * (1.0 - spec.nu_j) / 2.0;
    out.C = C;
  } else {
    const double lam = spec.Ej * spec.nu_j / ((1.0 + spec.nu_j) * (1.0 - 2.0 * spec.nu_j));
    const double mu = spec.Ej / (2.0 * (1.0 + spec.nu_j));
    Mat6 C = Mat6::Zero();
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) C(i, j) = lam;
      C(i, i) = lam + 2.0 * mu;
      C(3 + i, 3 + i) = mu;
    }
    out.C = C;
  }
  return out;
}

Mat3 plane_stress_reduce_mat(const Mat6& C6) {
  // In-plane Voigt rows (xx, yy, xy) and out-of-plane rows (zz, yz, xz).
  const std::array<int, 3> P = {0, 1, 5};
  const std::array<int, 3> O = {2, 3, 4};
  Mat3 CPP, CPO, COO;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      CPP(r, c) = C6(P[r], P[c]);
      CPO(r, c) = C6(P[r], O[c]);
      COO(r, c) = C6(O[r], O[c]);
    }
  Eigen::FullPivLU<Mat3> lu(COO);
  if (!lu.isInvertible())
    throw StabilityError("plane-stress condensation: singular out-of-plane block");
  Mat3 X = lu.solve(CPO.transpose());
  Mat3 C = CPP - CPO * X;
  return 0.5 * (C + C.transpose());
}

StiffnessTensor plane_stress_reduce(const StiffnessTensor& C6) {
  if (C6.voigt_size() != 6)
    throw std::invalid_argument("plane_stress_reduce expects a 6x6 tensor");
  return StiffnessTensor{plane_stress_reduce_mat(C6.C), C6.role};
}

Mat3 plane_stress_reduce_dir(const Mat6& C6, const Mat6& dC6) {
  const std::array<int, 3> P = {0, 1, 5};
  const std::array<int, 3> O = {2, 3, 4};
  Mat3 CPO, COO, dPP, dPO, dOO;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      CPO(r, c) = C6(P[r], O[c]);
      COO(r, c) = C6(O[r], O[c]);
      dPP(r, c) = dC6(P[r], P[c]);
      dPO(r, c) = dC6(P[r], O[c]);
      dOO(r, c) = dC6(O[r], O[c]);
    }
  Eigen::FullPivLU<Mat3> lu(COO);
  Mat3 X = lu.solve(CPO.transpose());  // COO^{-1} C_OP
  // d(CPP - CPO COO^{-1} COP) = dPP - dPO X - X^T dOP + X^T dOO X
  Mat3 dC = dPP - dPO * X - X.transpose() * dPO.transpose() + X.transpose() * dOO * X;
  return 0.5 * (dC + dC.transpose());
}

}  // namespace mto
