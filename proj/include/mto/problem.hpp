#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mto/elasticity.hpp"
#include "mto/mesh.hpp"

namespace mto {

/// Thrown on malformed or out-of-range configuration input; the message names
/// the offending key.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OptimizationConfig {
  int K = 2;
  double simp_p = 3.0;
  double vol_limit = 0.35;
  double sigma_bar = 1000.0;
  double eps_bar = 0.01;
  double filter_radius = -1.0;  // < 0: resolved to 2.5 * element_size
  double beta0 = 8.0;
  double beta_factor = 2.0;
  int beta_period = 50;
  double beta_max = 64.0;
  double eta = 0.5;
  double eta_interface = 0.1;
  double beta_stress = 16.0;
  double relax_q = 0.5;
  int max_iter = 400;
  double obj_tol = 1e-4;
  int n_starts = 5;
  std::uint64_t rng_seed = 0;
  int stress_start_iter = 30;
  double move_limit = 0.2;
  double move_limit_q = 0.1;
};

/// Raw (unfiltered) design fields. Masked-out elements carry zeros and are
/// excluded from the optimization vector.
struct DesignState {
  std::vector<double> rho;                              // per element
  std::vector<double> memberships;                      // [e * K + k]
  std::vector<std::array<double, 6>> orientation_vars;  // per component:
                                                        // (q11,q22,q33,q12,q13,q23)

  nlohmann::json to_json() const;
  static DesignState from_json(const nlohmann::json& j);
};

struct Problem {
  Mesh mesh;
  MaterialSpec material;
  JointSpec joint;
  OptimizationConfig opt;
  nlohmann::json resolved;  // full config after defaults and preset expansion

  /// FNV-1a over the canonical resolved config, ignoring the output section.
  std::uint64_t config_hash() const;
};

/// Full config document with every default in place; presets and user
/// documents merge over it.
nlohmann::json default_config();

/// Parse and validate a config document (defaults applied for omitted keys;
/// a top-level "preset" is expanded first, with the rest merged over it).
Problem build_problem(const nlohmann::json& doc);

std::vector<std::string> preset_names();
/// Throws std::out_of_range for unknown names.
nlohmann::json preset_config(const std::string& name);

/// Uniform fields at their feasible defaults; orientation variables drawn
/// uniformly from their boxes with a seeded generator (deterministic).
DesignState initialize_state(const Mesh& mesh, const OptimizationConfig& opt,
                             std::uint64_t seed);

/// Flattened optimizer vector: [rho | memberships | orientation slots], active
/// elements only; inert orientation slots (q33, and out-of-plane slots in 2D)
/// are excluded.
struct DesignVectorLayout {
  int dim = 2;
  int K = 1;
  std::vector<int> active_elements;
  std::vector<int> q_slots;  // {0,3} in 2D, {0,1,3,4,5} in 3D

  static DesignVectorLayout create(const Mesh& mesh, int K);

  int n_rho() const { return static_cast<int>(active_elements.size()); }
  int n_m() const { return n_rho() * K; }
  int n_q() const { return K * static_cast<int>(q_slots.size()); }
  int size() const { return n_rho() + n_m() + n_q(); }

  int rho_offset() const { return 0; }
  int m_offset() const { return n_rho(); }
  int q_offset() const { return n_rho() + n_m(); }
  int m_index(int a, int k) const { return m_offset() + a * K + k; }
  int q_index(int k, int slot_pos) const {
    return q_offset() + k * static_cast<int>(q_slots.size()) + slot_pos;
  }

  Eigen::VectorXd pack(const DesignState& s) const;
  /// Writes only the covered entries; masked elements and inert slots keep
  /// their values.
  void unpack(const Eigen::VectorXd& x, DesignState& s) const;
  void bounds(Eigen::VectorXd& lo, Eigen::VectorXd& hi) const;
  /// Per-variable move limits (fraction of box range).
  Eigen::VectorXd move_limits(double ml_rho_m, double ml_q) const;
};

}  // namespace mto
