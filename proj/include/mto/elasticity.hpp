#pragma once

#include <Eigen/Dense>
#include <stdexcept>

namespace mto {

using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec3 = Eigen::Vector3d;

/// Thrown when a set of engineering constants yields a non-PSD compliance
/// matrix (thermodynamically inadmissible material).
struct StabilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Transversely isotropic material, axis 1 = build direction.
/// nu21 is the minor transverse-axial ratio (compliance coupling -nu21/E2);
/// nu23 acts in the isotropic 2-3 plane.
struct MaterialSpec {
  double E1 = 2.0;
  double E2 = 10.0;
  double nu21 = 0.3;
  double nu23 = 0.3;
  double G12 = 3.85;
};

/// Isotropic interface (joint) material.
struct JointSpec {
  double Ej = 1.0;
  double nu_j = 0.3;
};

enum class TensorRole { TransverseBase, Rotated, Joint, BaseCombined, Combined };

/// Stiffness in Voigt form, order (11, 22, 33, 23, 13, 12), engineering shear
/// strains. 6x6 for 3D, 3x3 (order 11, 22, 12) for plane stress.
struct StiffnessTensor {
  Eigen::MatrixXd C;
  TensorRole role = TensorRole::TransverseBase;

  int voigt_size() const { return static_cast<int>(C.rows()); }
  int dim() const { return C.rows() == 6 ? 3 : 2; }
  double max_abs() const { return C.cwiseAbs().maxCoeff(); }
  double symmetry_error() const { return (C - C.transpose()).cwiseAbs().maxCoeff(); }
  double min_eigenvalue() const;
};

/// Coefficients of the closed-form rotation of a transversely isotropic
/// tensor by an orientation tensor.
struct RotationCoefficients {
  double B1 = 0, B2 = 0, B3 = 0, B4 = 0, B5 = 0;
};

/// Assemble the 6x6 transversely isotropic compliance from engineering
/// constants and invert it. Throws StabilityError if the compliance is not
/// positive definite. Warns (stderr) when E1 >= E2, which is unexpected for
/// layer-based AM but not forbidden.
StiffnessTensor transverse_from_engineering(const MaterialSpec& spec);

RotationCoefficients rotation_coefficients(const StiffnessTensor& Ct);

/// Closed-form rotation: C(a) = B1 a⊗a + B2 (a⊗I + I⊗a) + B3 (a ⊠ I terms)
/// + B4 I⊗I + B5 II. Exact for a = p⊗p; smooth in a.
StiffnessTensor rotate_tensor(const RotationCoefficients& B, const Mat3& a);

/// Directional derivative of rotate_tensor at a in direction da.
Mat6 rotate_tensor_dir(const RotationCoefficients& B, const Mat3& a, const Mat3& da);

/// Isotropic joint stiffness: full 6x6 for dim 3, plane-stress 3x3 for dim 2.
StiffnessTensor joint_tensor(const JointSpec& spec, int dim);

/// Static condensation of the out-of-plane components (zz, yz, xz) of a 6x6
/// tensor to the plane-stress 3x3 (xx, yy, xy). Requires an in-plane
/// orientation so that the in-plane/shear coupling vanishes.
StiffnessTensor plane_stress_reduce(const StiffnessTensor& C6);
Mat3 plane_stress_reduce_mat(const Mat6& C6);

/// Directional derivative of the condensation at C6 in direction dC6.
Mat3 plane_stress_reduce_dir(const Mat6& C6, const Mat6& dC6);

}  // namespace mto
