#include "mto/mesh.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mto {

std::array<int, 8> Mesh::element_nodes(int e) const {
  const auto [ix, iy, iz] = element_coords(e);
  std::array<int, 8> n{};
  n[0] = node_index(ix, iy, iz);
  n[1] = node_index(ix + 1, iy, iz);
  n[2] = node_index(ix + 1, iy + 1, iz);
  n[3] = node_index(ix, iy + 1, iz);
  if (dim == 3) {
    n[4] = node_index(ix, iy, iz + 1);
    n[5] = node_index(ix + 1, iy, iz + 1);
    n[6] = node_index(ix + 1, iy + 1, iz + 1);
    n[7] = node_index(ix, iy + 1, iz + 1);
  }
  return n;
}

std::array<int, 24> Mesh::element_dofs(int e) const {
  const auto nodes = element_nodes(e);
  std::array<int, 24> dofs{};
  for (int a = 0; a < nodes_per_element(); ++a)
    for (int c = 0; c < dim; ++c) dofs[a * dim + c] = nodes[a] * dim + c;
  return dofs;
}

int Mesh::active_count() const {
  if (domain_mask.empty()) return num_elements();
  int n = 0;
  for (auto v : domain_mask) n += v != 0;
  return n;
}

double Mesh::element_volume() const {
  return dim == 3 ? element_size * element_size * element_size
                  : element_size * element_size;
}

void Mesh::validate() const {
  if (dim != 2 && dim != 3) throw std::invalid_argument("mesh.dim must be 2 or 3");
  if (nelx < 1) throw std::invalid_argument("mesh.nelx must be >= 1");
  if (nely < 1) throw std::invalid_argument("mesh.nely must be >= 1");
  if (dim == 3 && nelz < 1) throw std::invalid_argument("mesh.nelz must be >= 1");
  if (!(element_size > 0)) throw std::invalid_argument("mesh.element_size must be > 0");
  if (!domain_mask.empty() && static_cast<int>(domain_mask.size()) != num_elements())
    throw std::invalid_argument("mesh.domain_mask length must equal the element count");
  const int nd = num_dofs();
  for (int d : fixed_dofs)
    if (d < 0 || d >= nd)
      throw std::invalid_argument("mesh.fixed_dofs contains index " + std::to_string(d) +
                                  " outside the DOF range");
  if (load_cases.empty()) throw std::invalid_argument("mesh.load_cases must not be empty");
  for (const auto& lc : load_cases)
    for (const auto& [d, f] : lc) {
      if (d < 0 || d >= nd)
        throw std::invalid_argument("mesh.load_cases contains DOF index " + std::to_string(d) +
                                    " outside the DOF range");
      if (!std::isfinite(f))
        throw std::invalid_argument("mesh.load_cases contains a non-finite force");
    }
  if (active_count() == 0)
    throw std::invalid_argument("mesh.domain_mask leaves no active elements");
}

}  // namespace mto
