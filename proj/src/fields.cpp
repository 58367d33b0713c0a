#include "mto/fields.hpp"

#include <cmath>
#include <stdexcept>

namespace mto {

HelmholtzFilter::HelmholtzFilter(const Mesh& mesh, double radius) {
  const int nel = mesh.num_elements();
  e2a_.assign(nel, -1);
  for (int e = 0; e < nel; ++e)
    if (mesh.active(e)) {
      e2a_[e] = static_cast<int>(a2e_.size());
      a2e_.push_back(e);
    }
  if (radius <= 0) {
    identity_ = true;
    return;
  }

  const double h = mesh.element_size;
  const double w = radius * radius / 12.0 / (h * h);  // r = radius/(2*sqrt(3))
  std::vector<Eigen::Triplet<double>> trips;
  const int n = static_cast<int>(a2e_.size());
  for (int a = 0; a < n; ++a) {
    const auto [ix, iy, iz] = mesh.element_coords(a2e_[a]);
    const int nbr[6][3] = {{ix - 1, iy, iz}, {ix + 1, iy, iz}, {ix, iy - 1, iz},
                           {ix, iy + 1, iz}, {ix, iy, iz - 1}, {ix, iy, iz + 1}};
    double diag = 1.0;
    const int nfaces = mesh.dim == 3 ? 6 : 4;
    for (int f = 0; f < nfaces; ++f) {
      const auto [jx, jy, jz] = nbr[f];
      if (jx < 0 || jx >= mesh.nelx || jy < 0 || jy >= mesh.nely || jz < 0 ||
          jz >= (mesh.dim == 3 ? mesh.nelz : 1))
        continue;
      const int b = e2a_[mesh.element_index(jx, jy, jz)];
      if (b < 0) continue;  // masked neighbor: zero flux
      diag += w;
      trips.emplace_back(a, b, -w);
    }
    trips.emplace_back(a, a, diag);
  }
  Eigen::SparseMatrix<double> A(n, n);
  A.setFromTriplets(trips.begin(), trips.end());
  solver_.compute(A);
  if (solver_.info() != Eigen::Success)
    throw std::runtime_error("Helmholtz filter factorization failed");
}

std::vector<double> HelmholtzFilter::apply(const std::vector<double>& x) const {
  if (identity_) return x;
  const int n = static_cast<int>(a2e_.size());
  Eigen::VectorXd b(n);
  for (int a = 0; a < n; ++a) b[a] = x[a2e_[a]];
  Eigen::VectorXd y = solver_.solve(b);
  std::vector<double> out = x;
  for (int a = 0; a < n; ++a) out[a2e_[a]] = y[a];
  return out;
}

GradientSampler::GradientSampler(const Mesh& mesh) : mesh_(mesh) {
  std::vector<int> count(mesh.num_nodes(), 0);
  for (int e = 0; e < mesh.num_elements(); ++e) {
    if (!mesh.active(e)) continue;
    const auto nodes = mesh.element_nodes(e);
    for (int a = 0; a < mesh.nodes_per_element(); ++a) count[nodes[a]]++;
  }
  inv_count_.assign(count.size(), 0.0);
  for (std::size_t i = 0; i < count.size(); ++i)
    if (count[i] > 0) inv_count_[i] = 1.0 / count[i];
}

namespace {

// Centroid shape-function gradient signs per corner: d/dx, d/dy (, d/dz).
constexpr int kSignQ4[4][2] = {{-1, -1}, {1, -1}, {1, 1}, {-1, 1}};
constexpr int kSignH8[8][3] = {{-1, -1, -1}, {1, -1, -1}, {1, 1, -1}, {-1, 1, -1},
                               {-1, -1, 1},  {1, -1, 1},  {1, 1, 1},  {-1, 1, 1}};

}  // namespace

std::vector<double> GradientSampler::apply(const std::vector<double>& x) const {
  const Mesh& m = mesh_;
  const int npe = m.nodes_per_element();
  std::vector<double> nodal(m.num_nodes(), 0.0);
  for (int e = 0; e < m.num_elements(); ++e) {
    if (!m.active(e)) continue;
    const auto nodes = m.element_nodes(e);
    for (int a = 0; a < npe; ++a) nodal[nodes[a]] += x[e] * inv_count_[nodes[a]];
  }
  // d/dx_c at the centroid = sum_a sign[a][c] * v_a / (2^(dim-1) * h).
  const double scale = 1.0 / ((m.dim == 3 ? 4.0 : 2.0) * m.element_size);
  std::vector<double> g(static_cast<std::size_t>(m.num_elements()) * m.dim, 0.0);
  for (int e = 0; e < m.num_elements(); ++e) {
    if (!m.active(e)) continue;
    const auto nodes = m.element_nodes(e);
    for (int c = 0; c < m.dim; ++c) {
      double s = 0;
      for (int a = 0; a < npe; ++a)
        s += (m.dim == 3 ? kSignH8[a][c] : kSignQ4[a][c]) * nodal[nodes[a]];
      g[static_cast<std::size_t>(e) * m.dim + c] = s * scale;
    }
  }
  return g;
}

std::vector<double> GradientSampler::apply_transpose(const std::vector<double>& gbar) const {
  const Mesh& m = mesh_;
  const int npe = m.nodes_per_element();
  const double scale = 1.0 / ((m.dim == 3 ? 4.0 : 2.0) * m.element_size);
  std::vector<double> nodal(m.num_nodes(), 0.0);
  for (int e = 0; e < m.num_elements(); ++e) {
    if (!m.active(e)) continue;
    const auto nodes = m.element_nodes(e);
    for (int c = 0; c < m.dim; ++c) {
      const double gb = gbar[static_cast<std::size_t>(e) * m.dim + c] * scale;
      for (int a = 0; a < npe; ++a)
        nodal[nodes[a]] += (m.dim == 3 ? kSignH8[a][c] : kSignQ4[a][c]) * gb;
    }
  }
  std::vector<double> xbar(m.num_elements(), 0.0);
  for (int e = 0; e < m.num_elements(); ++e) {
    if (!m.active(e)) continue;
    const auto nodes = m.element_nodes(e);
    double s = 0;
    for (int a = 0; a < npe; ++a) s += nodal[nodes[a]] * inv_count_[nodes[a]];
    xbar[e] = s;
  }
  return xbar;
}

void dmo_weights(std::span<const double> m, double p, std::span<double> w) {
  const int K = static_cast<int>(m.size());
  for (int k = 0; k < K; ++k) {
    double v = std::pow(m[k], p);
    for (int j = 0; j < K; ++j)
      if (j != k) v *= 1.0 - std::pow(m[j], p);
    w[k] = v;
  }
}

void dmo_weights_jacobian(std::span<const double> m, double p, std::span<double> w,
                          std::span<double> J) {
  const int K = static_cast<int>(m.size());
  std::vector<double> mp(K), dmp(K);
  for (int k = 0; k < K; ++k) {
    mp[k] = std::pow(m[k], p);
    dmp[k] = p * std::pow(m[k], p - 1.0);
  }
  for (int k = 0; k < K; ++k) {
    double prod = 1.0;
    for (int j = 0; j < K; ++j)
      if (j != k) prod *= 1.0 - mp[j];
    w[k] = mp[k] * prod;
    for (int l = 0; l < K; ++l) {
      if (l == k) {
        J[k * K + l] = dmp[k] * prod;
      } else {
        double rest = mp[k];
        for (int j = 0; j < K; ++j)
          if (j != k && j != l) rest *= 1.0 - mp[j];
        J[k * K + l] = -dmp[l] * rest;
      }
    }
  }
}

FilteredFields compute_filtered_fields(const DesignState& s, const Mesh& mesh,
                                       const HelmholtzFilter& filter,
                                       const GradientSampler& sampler, double simp_p,
                                       const HeavisideSpec& projection) {
  FilteredFields f;
  const int nel = mesh.num_elements();
  const int K = static_cast<int>(s.orientation_vars.size());
  f.K = K;
  f.rho_filt = filter.apply(s.rho);
  f.rho_tilde.resize(nel);
  for (int e = 0; e < nel; ++e) f.rho_tilde[e] = smoothed_heaviside(f.rho_filt[e], projection);

  f.m_filt.resize(static_cast<std::size_t>(nel) * K);
  f.m_tilde.resize(static_cast<std::size_t>(nel) * K);
  std::vector<double> mk(nel);
  for (int k = 0; k < K; ++k) {
    for (int e = 0; e < nel; ++e) mk[e] = s.memberships[static_cast<std::size_t>(e) * K + k];
    std::vector<double> mf = filter.apply(mk);
    for (int e = 0; e < nel; ++e) {
      f.m_filt[static_cast<std::size_t>(e) * K + k] = mf[e];
      f.m_tilde[static_cast<std::size_t>(e) * K + k] = smoothed_heaviside(mf[e], projection);
    }
  }

  f.grad_cache.assign(static_cast<std::size_t>(nel) * K * mesh.dim, 0.0);
  std::vector<double> field(nel);
  for (int k = 0; k < K; ++k) {
    for (int e = 0; e < nel; ++e)
      field[e] = std::pow(f.rho_tilde[e], simp_p) * f.m_tilde[static_cast<std::size_t>(e) * K + k];
    std::vector<double> g = sampler.apply(field);
    for (int e = 0; e < nel; ++e)
      for (int c = 0; c < mesh.dim; ++c)
        f.grad_cache[(static_cast<std::size_t>(e) * K + k) * mesh.dim + c] =
            g[static_cast<std::size_t>(e) * mesh.dim + c];
  }
  return f;
}

InterfaceField interface_indicator(const FilteredFields& f, const Mesh& mesh,
                                   const HeavisideSpec& spec) {
  InterfaceField out;
  const int nel = mesh.num_elements();
  const int K = f.K;
  const double q = 0.25 / mesh.element_size;
  out.reference = q * q * q * q;
  out.raw.assign(nel, 0.0);
  out.I.assign(nel, 0.0);
  for (int e = 0; e < nel; ++e) {
    if (!mesh.active(e)) continue;
    double raw = 0;
    for (int i = 1; i < K; ++i) {
      double gi = 0;
      for (int c = 0; c < mesh.dim; ++c) {
        const double v = f.grad_cache[(static_cast<std::size_t>(e) * K + i) * mesh.dim + c];
        gi += v * v;
      }
      for (int j = 0; j < i; ++j) {
        double gj = 0;
        for (int c = 0; c < mesh.dim; ++c) {
          const double v = f.grad_cache[(static_cast<std::size_t>(e) * K + j) * mesh.dim + c];
          gj += v * v;
        }
        raw += gi * gj;
      }
    }
    out.raw[e] = raw;
    out.I[e] = smoothed_heaviside(raw / out.reference, spec);
  }
  return out;
}

StiffnessTensor combined_base_tensor(double rho_tilde, std::span<const double> w,
                                     const std::vector<StiffnessTensor>& Cr, double simp_p) {
  StiffnessTensor out;
  out.role = TensorRole::BaseCombined;
  out.C = Eigen::MatrixXd::Zero(Cr[0].C.rows(), Cr[0].C.cols());
  for (std::size_t k = 0; k < Cr.size(); ++k) out.C += w[k] * Cr[k].C;
  out.C *= simp_scale(rho_tilde, simp_p);
  return out;
}

StiffnessTensor combined_stiffness(const StiffnessTensor& CB, const StiffnessTensor& CJ,
                                   double I) {
  StiffnessTensor out;
  out.role = TensorRole::Combined;
  out.C = (1.0 - I) * CB.C + I * CJ.C;
  return out;
}

}  // namespace mto
