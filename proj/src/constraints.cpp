#include "mto/constraints.hpp"

namespace mto {

double volume_constraint(const std::vector<double>& rho_tilde, const Mesh& mesh,
                         double vol_limit) {
  const double v = mesh.element_volume();
  double sum = 0;
  for (int e = 0; e < mesh.num_elements(); ++e)
    if (mesh.active(e)) sum += rho_tilde[e] * v;
  return sum / mesh.total_volume() - vol_limit;
}

ConstraintValues stress_constraint(const std::vector<double>& I,
                                   const std::vector<std::vector<double>>& von_mises,
                                   double sigma_bar, double eps_bar, const HeavisideSpec& spec,
                                   const Mesh& mesh) {
  ConstraintValues out;
  const double v = mesh.element_volume();
  double sum = 0;
  for (const auto& vm : von_mises) {
    for (int e = 0; e < mesh.num_elements(); ++e) {
      if (!mesh.active(e)) continue;
      const double s = vm[e];
      sum += I[e] * smoothed_heaviside((s - sigma_bar) / sigma_bar, spec) *
             (s / sigma_bar) * (s / sigma_bar) * v;
      if (I[e] >= 0.5 && s > out.max_interface_stress) out.max_interface_stress = s;
    }
  }
  out.g2 = sum - eps_bar;
  for (int e = 0; e < mesh.num_elements(); ++e)
    if (mesh.active(e)) out.interface_volume += I[e] * v;
  return out;
}

}  // namespace mto
