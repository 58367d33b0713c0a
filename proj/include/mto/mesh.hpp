#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <vector>

namespace mto {

/// Regular grid of bilinear quads (2D) or trilinear hexes (3D) with uniform
/// element size. Nodes and elements are numbered x-fastest, then y, then z.
/// Element nodes: counterclockwise in-plane starting at the lower-left corner,
/// bottom layer before top layer in 3D. DOF index = node * dim + component.
struct Mesh {
  int dim = 2;
  int nelx = 1, nely = 1, nelz = 1;
  double element_size = 1.0;
  std::vector<int> fixed_dofs;                    // sorted, unique
  std::vector<std::map<int, double>> load_cases;  // dof -> force
  std::vector<std::uint8_t> domain_mask;          // empty = all active

  int num_elements() const { return nelx * nely * (dim == 3 ? nelz : 1); }
  int num_nodes() const {
    return (nelx + 1) * (nely + 1) * (dim == 3 ? nelz + 1 : 1);
  }
  int num_dofs() const { return dim * num_nodes(); }
  int nodes_per_element() const { return dim == 3 ? 8 : 4; }
  int dofs_per_element() const { return dim * nodes_per_element(); }

  int element_index(int ix, int iy, int iz = 0) const {
    return (iz * nely + iy) * nelx + ix;
  }
  std::array<int, 3> element_coords(int e) const {
    const int ix = e % nelx, r = e / nelx;
    return {ix, r % nely, r / nely};
  }
  int node_index(int ix, int iy, int iz = 0) const {
    return (iz * (nely + 1) + iy) * (nelx + 1) + ix;
  }

  std::array<int, 8> element_nodes(int e) const;
  std::array<int, 24> element_dofs(int e) const;

  bool active(int e) const {
    return domain_mask.empty() || domain_mask[e] != 0;
  }
  int active_count() const;
  double element_volume() const;
  /// V0: element volume times active-element count.
  double total_volume() const { return element_volume() * active_count(); }

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

}  // namespace mto
