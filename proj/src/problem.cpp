#include "mto/problem.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mto {

namespace {

using nlohmann::json;

void check_keys(const json& sec, const std::string& name, std::initializer_list<const char*> ok) {
  for (const auto& [k, v] : sec.items())
    if (std::none_of(ok.begin(), ok.end(), [&](const char* a) { return k == a; }))
      throw ConfigError(name + "." + k + " is not a recognized key");
}

const json& need(const json& sec, const std::string& name, const char* key) {
  if (!sec.contains(key)) throw ConfigError(name + "." + key + " is required");
  return sec[key];
}

double num(const json& sec, const std::string& name, const char* key) {
  const json& v = need(sec, name, key);
  if (!v.is_number()) throw ConfigError(name + "." + key + " must be a number");
  return v.get<double>();
}

int integer(const json& sec, const std::string& name, const char* key) {
  const json& v = need(sec, name, key);
  if (!v.is_number_integer()) throw ConfigError(name + "." + key + " must be an integer");
  return v.get<int>();
}

}  // namespace

json default_config() {
  json j;
  j["mesh"] = {{"dim", 2},
               {"nelx", nullptr},
               {"nely", nullptr},
               {"nelz", 1},
               {"element_size", 1.0},
               {"fixed_dofs", json::array()},
               {"load_cases", json::array()},
               {"inactive_box", nullptr}};
  j["material"] = {{"E1", 2.0}, {"E2", 10.0}, {"nu21", 0.3}, {"nu23", 0.3}, {"G12", 3.85}};
  j["joint"] = {{"Ej", 1.0}, {"nu_j", 0.3}};
  j["optimization"] = {{"K", 2},
                       {"simp_p", 3.0},
                       {"vol_limit", 0.35},
                       {"sigma_bar", 1000.0},
                       {"eps_bar", 0.01},
                       {"filter_radius", -1.0},
                       {"beta0", 8.0},
                       {"beta_factor", 2.0},
                       {"beta_period", 50},
                       {"beta_max", 64.0},
                       {"eta", 0.5},
                       {"eta_interface", 0.1},
                       {"beta_stress", 16.0},
                       {"relax_q", 0.5},
                       {"max_iter", 400},
                       {"obj_tol", 1e-4},
                       {"n_starts", 5},
                       {"rng_seed", 0},
                       {"stress_start_iter", 30},
                       {"move_limit", 0.2},
                       {"move_limit_q", 0.1}};
  j["output"] = json::object();
  return j;
}

nlohmann::json DesignState::to_json() const {
  json j;
  j["rho"] = rho;
  j["memberships"] = memberships;
  json qs = json::array();
  for (const auto& q : orientation_vars) qs.push_back(std::vector<double>(q.begin(), q.end()));
  j["orientation_vars"] = qs;
  return j;
}

DesignState DesignState::from_json(const nlohmann::json& j) {
  DesignState s;
  if (!j.is_object() || !j.contains("rho") || !j.contains("memberships") ||
      !j.contains("orientation_vars"))
    throw ConfigError("state document must contain rho, memberships, orientation_vars");
  s.rho = j["rho"].get<std::vector<double>>();
  s.memberships = j["memberships"].get<std::vector<double>>();
  for (const auto& qj : j["orientation_vars"]) {
    auto v = qj.get<std::vector<double>>();
    if (v.size() != 6) throw ConfigError("state.orientation_vars entries must have 6 values");
    std::array<double, 6> q;
    std::copy(v.begin(), v.end(), q.begin());
    s.orientation_vars.push_back(q);
  }
  return s;
}

std::uint64_t Problem::config_hash() const {
  json j = resolved;
  j.erase("output");
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Problem build_problem(const nlohmann::json& doc_in) {
  if (!doc_in.is_object()) throw ConfigError("config root must be an object");
  json doc = doc_in;
  if (doc.contains("preset")) {
    if (!doc["preset"].is_string()) throw ConfigError("preset must be a string");
    const std::string name = doc["preset"].get<std::string>();
    json base;
    try {
      base = preset_config(name);
    } catch (const std::out_of_range&) {
      throw ConfigError("unknown preset \"" + name + "\"");
    }
    doc.erase("preset");
    base.merge_patch(doc);
    doc = std::move(base);
  }

  check_keys(doc, "config", {"mesh", "material", "joint", "optimization", "output"});
  json res = default_config();
  res.merge_patch(doc);

  Problem p;

  const json& mj = res["mesh"];
  if (!mj.is_object()) throw ConfigError("mesh must be an object");
  check_keys(mj, "mesh",
             {"dim", "nelx", "nely", "nelz", "element_size", "fixed_dofs", "load_cases",
              "inactive_box"});
  Mesh& m = p.mesh;
  m.dim = integer(mj, "mesh", "dim");
  if (m.dim != 2 && m.dim != 3) throw ConfigError("mesh.dim must be 2 or 3");
  if (need(mj, "mesh", "nelx").is_null()) throw ConfigError("mesh.nelx is required");
  if (need(mj, "mesh", "nely").is_null()) throw ConfigError("mesh.nely is required");
  m.nelx = integer(mj, "mesh", "nelx");
  m.nely = integer(mj, "mesh", "nely");
  m.nelz = m.dim == 3 ? integer(mj, "mesh", "nelz") : 1;
  m.element_size = num(mj, "mesh", "element_size");

  const json& fd = need(mj, "mesh", "fixed_dofs");
  if (!fd.is_array()) throw ConfigError("mesh.fixed_dofs must be an array of DOF indices");
  for (const auto& v : fd) {
    if (!v.is_number_integer()) throw ConfigError("mesh.fixed_dofs must contain integers");
    m.fixed_dofs.push_back(v.get<int>());
  }
  std::sort(m.fixed_dofs.begin(), m.fixed_dofs.end());
  m.fixed_dofs.erase(std::unique(m.fixed_dofs.begin(), m.fixed_dofs.end()), m.fixed_dofs.end());

  const json& lcs = need(mj, "mesh", "load_cases");
  if (!lcs.is_array()) throw ConfigError("mesh.load_cases must be an array");
  for (const auto& lcj : lcs) {
    if (!lcj.is_array()) throw ConfigError("mesh.load_cases entries must be arrays of [dof, force]");
    std::map<int, double> lc;
    for (const auto& pr : lcj) {
      if (!pr.is_array() || pr.size() != 2 || !pr[0].is_number_integer() || !pr[1].is_number())
        throw ConfigError("mesh.load_cases entries must be arrays of [dof, force]");
      lc[pr[0].get<int>()] += pr[1].get<double>();
    }
    m.load_cases.push_back(std::move(lc));
  }

  if (mj.contains("inactive_box") && !mj["inactive_box"].is_null()) {
    const json& box = mj["inactive_box"];
    const int n = m.dim == 3 ? 6 : 4;
    if (!box.is_array() || static_cast<int>(box.size()) != n)
      throw ConfigError("mesh.inactive_box must have " + std::to_string(n) + " element indices");
    std::array<int, 6> b{0, 0, 0, 0, 0, 0};
    if (m.dim == 2) {
      b = {box[0].get<int>(), box[1].get<int>(), 0, box[2].get<int>(), box[3].get<int>(), 1};
    } else {
      for (int i = 0; i < 6; ++i) b[i] = box[i].get<int>();
    }
    m.domain_mask.assign(m.num_elements(), 1);
    for (int e = 0; e < m.num_elements(); ++e) {
      const auto [ix, iy, iz] = m.element_coords(e);
      if (ix >= b[0] && ix < b[3] && iy >= b[1] && iy < b[4] && iz >= b[2] && iz < b[5])
        m.domain_mask[e] = 0;
    }
  }
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  const json& matj = res["material"];
  check_keys(matj, "material", {"E1", "E2", "nu21", "nu23", "G12"});
  p.material = {num(matj, "material", "E1"), num(matj, "material", "E2"),
                num(matj, "material", "nu21"), num(matj, "material", "nu23"),
                num(matj, "material", "G12")};
  transverse_from_engineering(p.material);  // thermodynamic admissibility check

  const json& jj = res["joint"];
  check_keys(jj, "joint", {"Ej", "nu_j"});
  p.joint = {num(jj, "joint", "Ej"), num(jj, "joint", "nu_j")};
  joint_tensor(p.joint, m.dim);

  const json& oj = res["optimization"];
  check_keys(oj, "optimization",
             {"K", "simp_p", "vol_limit", "sigma_bar", "eps_bar", "filter_radius", "beta0",
              "beta_factor", "beta_period", "beta_max", "eta", "eta_interface", "beta_stress",
              "relax_q", "max_iter", "obj_tol", "n_starts", "rng_seed", "stress_start_iter",
              "move_limit", "move_limit_q"});
  OptimizationConfig& o = p.opt;
  o.K = integer(oj, "optimization", "K");
  o.simp_p = num(oj, "optimization", "simp_p");
  o.vol_limit = num(oj, "optimization", "vol_limit");
  o.sigma_bar = num(oj, "optimization", "sigma_bar");
  o.eps_bar = num(oj, "optimization", "eps_bar");
  o.filter_radius = num(oj, "optimization", "filter_radius");
  o.beta0 = num(oj, "optimization", "beta0");
  o.beta_factor = num(oj, "optimization", "beta_factor");
  o.beta_period = integer(oj, "optimization", "beta_period");
  o.beta_max = num(oj, "optimization", "beta_max");
  o.eta = num(oj, "optimization", "eta");
  o.eta_interface = num(oj, "optimization", "eta_interface");
  o.beta_stress = num(oj, "optimization", "beta_stress");
  o.relax_q = num(oj, "optimization", "relax_q");
  o.max_iter = integer(oj, "optimization", "max_iter");
  o.obj_tol = num(oj, "optimization", "obj_tol");
  o.n_starts = integer(oj, "optimization", "n_starts");
  const json& seedj = need(oj, "optimization", "rng_seed");
  if (!seedj.is_number_integer() ||
      (!seedj.is_number_unsigned() && seedj.get<std::int64_t>() < 0))
    throw ConfigError("optimization.rng_seed must be a nonnegative integer");
  o.rng_seed = seedj.get<std::uint64_t>();
  o.stress_start_iter = integer(oj, "optimization", "stress_start_iter");
  o.move_limit = num(oj, "optimization", "move_limit");
  o.move_limit_q = num(oj, "optimization", "move_limit_q");

  if (o.K < 1) throw ConfigError("optimization.K must be >= 1");
  if (o.simp_p < 1) throw ConfigError("optimization.simp_p must be >= 1");
  if (!(o.vol_limit > 0 && o.vol_limit < 1))
    throw ConfigError("optimization.vol_limit must be in (0, 1)");
  if (!(o.sigma_bar > 0)) throw ConfigError("optimization.sigma_bar must be > 0");
  if (!(o.eps_bar > 0)) throw ConfigError("optimization.eps_bar must be > 0");
  if (o.filter_radius < 0) o.filter_radius = 2.5 * m.element_size;
  if (!(o.beta0 > 0)) throw ConfigError("optimization.beta0 must be > 0");
  if (o.beta_factor < 1) throw ConfigError("optimization.beta_factor must be >= 1");
  if (o.beta_period < 1) throw ConfigError("optimization.beta_period must be >= 1");
  if (o.beta_max < o.beta0) throw ConfigError("optimization.beta_max must be >= beta0");
  if (!(o.eta > 0 && o.eta < 1)) throw ConfigError("optimization.eta must be in (0, 1)");
  if (!(o.eta_interface > 0 && o.eta_interface < 1))
    throw ConfigError("optimization.eta_interface must be in (0, 1)");
  if (!(o.beta_stress > 0)) throw ConfigError("optimization.beta_stress must be > 0");
  if (!(o.relax_q > 0 && o.relax_q < o.simp_p))
    throw ConfigError("optimization.relax_q must be in (0, simp_p)");
  if (o.max_iter < 1) throw ConfigError("optimization.max_iter must be >= 1");
  if (!(o.obj_tol > 0)) throw ConfigError("optimization.obj_tol must be > 0");
  if (o.n_starts < 1) throw ConfigError("optimization.n_starts must be >= 1");
  if (o.stress_start_iter < 0)
    throw ConfigError("optimization.stress_start_iter must be >= 0");
  if (!(o.move_limit > 0 && o.move_limit <= 1))
    throw ConfigError("optimization.move_limit must be in (0, 1]");
  if (!(o.move_limit_q > 0 && o.move_limit_q <= 1))
    throw ConfigError("optimization.move_limit_q must be in (0, 1]");

  res["optimization"]["filter_radius"] = o.filter_radius;
  if (!res["output"].is_object()) throw ConfigError("output must be an object");
  p.resolved = std::move(res);
  return p;
}

namespace {

// Consistent nodal weights for a uniform load over a 2-element edge patch.
constexpr double kPatch[3] = {0.25, 0.5, 0.25};

json cantilever_like(int nelx, int nely, int K) {
  Mesh m;
  m.dim = 2;
  m.nelx = nelx;
  m.nely = nely;
  json fixed = json::array();
  for (int iy = 0; iy <= nely; ++iy)
    for (int c = 0; c < 2; ++c) fixed.push_back(m.node_index(0, iy) * 2 + c);
  json lc = json::array();
  for (int t = 0; t < 3; ++t) {
    const int node = m.node_index(nelx, nely / 2 - 1 + t);
    lc.push_back({node * 2 + 1, -kPatch[t]});
  }
  json doc;
  doc["mesh"] = {{"dim", 2},
                 {"nelx", nelx},
                 {"nely", nely},
                 {"element_size", 1.0 / nely},
                 {"fixed_dofs", fixed},
                 {"load_cases", json::array({lc})}};
  doc["optimization"] = {{"K", K}};
  return doc;
}

json bridge2d() {
  Mesh m;
  m.dim = 2;
  m.nelx = 120;
  m.nely = 60;
  json fixed = json::array();
  fixed.push_back(m.node_index(0, 0) * 2);
  fixed.push_back(m.node_index(0, 0) * 2 + 1);
  fixed.push_back(m.node_index(m.nelx, 0) * 2 + 1);  // roller: vertical only
  json lc = json::array();
  for (int t = 0; t < 3; ++t)  // left load, twice the right one
    lc.push_back({m.node_index(m.nelx / 4 - 1 + t, 0) * 2 + 1, -2.0 * kPatch[t]});
  for (int t = 0; t < 3; ++t)
    lc.push_back({m.node_index(3 * m.nelx / 4 - 1 + t, 0) * 2 + 1, -1.0 * kPatch[t]});
  json doc;
  doc["mesh"] = {{"dim", 2},
                 {"nelx", m.nelx},
                 {"nely", m.nely},
                 {"element_size", 1.0 / 60},
                 {"fixed_dofs", fixed},
                 {"load_cases", json::array({lc})}};
  doc["optimization"] = {{"K", 2}};
  return doc;
}

json lbracket2d() {
  Mesh m;
  m.dim = 2;
  m.nelx = 100;
  m.nely = 100;
  const int arm = 40;  // active: vertical arm ix < arm, horizontal arm iy < arm
  json fixed = json::array();
  for (int ix = 0; ix <= arm; ++ix)
    for (int c = 0; c < 2; ++c) fixed.push_back(m.node_index(ix, m.nely) * 2 + c);
  json lc = json::array();
  for (int t = 0; t < 3; ++t)
    lc.push_back({m.node_index(m.nelx - 2 + t, arm) * 2 + 1, -kPatch[t]});
  json doc;
  doc["mesh"] = {{"dim", 2},
                 {"nelx", m.nelx},
                 {"nely", m.nely},
                 {"element_size", 0.01},
                 {"fixed_dofs", fixed},
                 {"load_cases", json::array({lc})},
                 {"inactive_box", {arm, arm, m.nelx, m.nely}}};
  doc["optimization"] = {{"K", 3}};
  return doc;
}

json multiload3d() {
  Mesh m;
  m.dim = 3;
  m.nelx = m.nely = m.nelz = 24;
  const int n = m.nelx;
  json fixed = json::array();
  for (int iz = 0; iz <= n; ++iz)
    for (int iy = 0; iy <= n; ++iy)
      for (int ix = 0; ix <= n; ++ix) {
        if (ix != 0 && iy != 0 && iz != 0) continue;
        const int node = m.node_index(ix, iy, iz);
        for (int c = 0; c < 3; ++c) fixed.push_back(node * 3 + c);
      }
  // Three cyclic shear cases: tangential load on each far face, centered 3x3
  // patch, opposite face fixed.
  const int c0 = n / 2 - 1;
  json cases = json::array();
  for (int axis = 0; axis < 3; ++axis) {
    json lc = json::array();
    const int fdir = (axis + 1) % 3;  // force direction is the next axis
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        int coord[3];
        coord[axis] = n;
        coord[(axis + 1) % 3] = c0 + a;
        coord[(axis + 2) % 3] = c0 + b;
        const int node = m.node_index(coord[0], coord[1], coord[2]);
        lc.push_back({node * 3 + fdir, kPatch[a] * kPatch[b]});
      }
    cases.push_back(lc);
  }
  json doc;
  doc["mesh"] = {{"dim", 3},      {"nelx", n},
                 {"nely", n},     {"nelz", n},
                 {"element_size", 1.0 / n}, {"fixed_dofs", fixed},
                 {"load_cases", cases}};
  doc["optimization"] = {{"K", 3}};
  return doc;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"cantilever2d", "bridge2d", "lbracket2d", "multiload3d", "gradcheck2d"};
}

nlohmann::json preset_config(const std::string& name) {
  if (name == "cantilever2d") return cantilever_like(120, 60, 3);
  if (name == "bridge2d") return bridge2d();
  if (name == "lbracket2d") return lbracket2d();
  if (name == "multiload3d") return multiload3d();
  if (name == "gradcheck2d") {
    json doc = cantilever_like(12, 8, 2);
    doc["optimization"]["n_starts"] = 1;
    doc["optimization"]["max_iter"] = 150;
    return doc;
  }
  throw std::out_of_range("unknown preset " + name);
}

DesignState initialize_state(const Mesh& mesh, const OptimizationConfig& opt,
                             std::uint64_t seed) {
  DesignState s;
  const int nel = mesh.num_elements();
  const int K = opt.K;
  s.rho.assign(nel, 0.0);
  s.memberships.assign(static_cast<std::size_t>(nel) * K, 0.0);
  for (int e = 0; e < nel; ++e) {
    if (!mesh.active(e)) continue;
    s.rho[e] = opt.vol_limit;
    for (int k = 0; k < K; ++k) s.memberships[static_cast<std::size_t>(e) * K + k] = 1.0 / K;
  }
  std::mt19937_64 rng(seed);
  auto u01 = [&rng] { return (rng() >> 11) * 0x1.0p-53; };
  for (int k = 0; k < K; ++k) {
    std::array<double, 6> q;
    for (int slot = 0; slot < 3; ++slot) q[slot] = u01();
    for (int slot = 3; slot < 6; ++slot) q[slot] = 2.0 * u01() - 1.0;
    if (mesh.dim == 2) {
      q[1] = 1.0;  // 2-simplex branch: a22 = 1 - a11
      q[4] = 0.0;
      q[5] = 0.0;
    }
    s.orientation_vars.push_back(q);
  }
  return s;
}

DesignVectorLayout DesignVectorLayout::create(const Mesh& mesh, int K) {
  DesignVectorLayout l;
  l.dim = mesh.dim;
  l.K = K;
  for (int e = 0; e < mesh.num_elements(); ++e)
    if (mesh.active(e)) l.active_elements.push_back(e);
  l.q_slots = mesh.dim == 2 ? std::vector<int>{0, 3} : std::vector<int>{0, 1, 3, 4, 5};
  return l;
}

Eigen::VectorXd DesignVectorLayout::pack(const DesignState& s) const {
  Eigen::VectorXd x(size());
  const int nA = n_rho();
  for (int a = 0; a < nA; ++a) {
    const int e = active_elements[a];
    x[a] = s.rho[e];
    for (int k = 0; k < K; ++k) x[m_index(a, k)] = s.memberships[static_cast<std::size_t>(e) * K + k];
  }
  for (int k = 0; k < K; ++k)
    for (int sp = 0; sp < static_cast<int>(q_slots.size()); ++sp)
      x[q_index(k, sp)] = s.orientation_vars[k][q_slots[sp]];
  return x;
}

void DesignVectorLayout::unpack(const Eigen::VectorXd& x, DesignState& s) const {
  const int nA = n_rho();
  for (int a = 0; a < nA; ++a) {
    const int e = active_elements[a];
    s.rho[e] = x[a];
    for (int k = 0; k < K; ++k) s.memberships[static_cast<std::size_t>(e) * K + k] = x[m_index(a, k)];
  }
  for (int k = 0; k < K; ++k)
    for (int sp = 0; sp < static_cast<int>(q_slots.size()); ++sp)
      s.orientation_vars[k][q_slots[sp]] = x[q_index(k, sp)];
}

void DesignVectorLayout::bounds(Eigen::VectorXd& lo, Eigen::VectorXd& hi) const {
  lo.setZero(size());
  hi.setOnes(size());
  for (int k = 0; k < K; ++k)
    for (int sp = 0; sp < static_cast<int>(q_slots.size()); ++sp)
      if (q_slots[sp] >= 3) lo[q_index(k, sp)] = -1.0;  // coupling slots
}

Eigen::VectorXd DesignVectorLayout::move_limits(double ml_rho_m, double ml_q) const {
  Eigen::VectorXd ml = Eigen::VectorXd::Constant(size(), ml_rho_m);
  for (int k = 0; k < K; ++k)
    for (int sp = 0; sp < static_cast<int>(q_slots.size()); ++sp)
      ml[q_index(k, sp)] = ml_q * (q_slots[sp] >= 3 ? 2.0 : 1.0);
  return ml;
}

}  // namespace mto
