#pragma once

#include <vector>

#include "mto/mesh.hpp"
#include "mto/orientation.hpp"

namespace mto {

struct ConstraintValues {
  double g1 = 0;                    // volume fraction excess
  double g2 = 0;                    // aggregated interface stress excess
  double max_interface_stress = 0;  // diagnostic: max over elements with I > 0.5
  double interface_volume = 0;      // diagnostic: sum I_e * v_e
};

/// g1 = (sum over active elements of rho_tilde * v_e) / V0 - vol_limit.
double volume_constraint(const std::vector<double>& rho_tilde, const Mesh& mesh,
                         double vol_limit);

/// g2 = sum_e I_e * H((sigma_e - sigma_bar)/sigma_bar) * (sigma_e/sigma_bar)^2 * v_e
///      - eps_bar, aggregated over all load cases with the given Heaviside.
/// Also fills the interface-stress diagnostics.
ConstraintValues stress_constraint(const std::vector<double>& I,
                                   const std::vector<std::vector<double>>& von_mises,
                                   double sigma_bar, double eps_bar, const HeavisideSpec& spec,
                                   const Mesh& mesh);

}  // namespace mto
