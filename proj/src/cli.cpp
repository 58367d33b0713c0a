#include "mto/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace mto {

namespace {

using nlohmann::json;

constexpr const char* kVersion = "1.0.0";

std::string preset_list() {
  std::string s;
  for (const std::string& n : preset_names()) {
    if (!s.empty()) s += ", ";
    s += n;
  }
  return s;
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);  // unquoted strings pass through verbatim
  }
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  f << content;
  if (!f.good()) throw std::runtime_error("cannot write " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string vtk_header(const Mesh& mesh, const std::string& title) {
  char buf[256];
  const int nz = mesh.dim == 3 ? mesh.nelz : 0;
  std::snprintf(buf, sizeof buf,
                "# vtk DataFile Version 3.0\n%s\nASCII\nDATASET STRUCTURED_POINTS\n"
                "DIMENSIONS %d %d %d\nORIGIN 0 0 0\nSPACING %g %g %g\nCELL_DATA %d\n",
                title.c_str(), mesh.nelx + 1, mesh.nely + 1, nz + 1, mesh.element_size,
                mesh.element_size, mesh.element_size, mesh.num_elements());
  return buf;
}

void append_scalars(std::string& out, const std::string& name,
                    const std::vector<double>& vals) {
  out += "SCALARS " + name + " double 1\nLOOKUP_TABLE default\n";
  char buf[64];
  for (double v : vals) {
    std::snprintf(buf, sizeof buf, "%.9g\n", v);
    out += buf;
  }
}

void append_int_scalars(std::string& out, const std::string& name,
                        const std::vector<int>& vals) {
  out += "SCALARS " + name + " int 1\nLOOKUP_TABLE default\n";
  for (int v : vals) out += std::to_string(v) + "\n";
}

std::string pgm_image(const Mesh& mesh, const std::vector<double>& field) {
  std::string out = "P2\n" + std::to_string(mesh.nelx) + " " + std::to_string(mesh.nely) +
                    "\n255\n";
  for (int iy = mesh.nely - 1; iy >= 0; --iy) {
    for (int ix = 0; ix < mesh.nelx; ++ix) {
      const double v = std::clamp(field[mesh.element_index(ix, iy)], 0.0, 1.0);
      out += std::to_string(static_cast<int>(std::lround(255.0 * v)));
      out += ix + 1 == mesh.nelx ? '\n' : ' ';
    }
  }
  return out;
}

/// Interior randomized design: away from every bound so central differences
/// stay inside the box. Memberships are banded by component with jitter so
/// every seed produces genuine component seams, keeping the interface-stress
/// functional measurably active.
DesignState randomized_state(const Problem& pb, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto u01 = [&rng] { return (rng() >> 11) * 0x1.0p-53; };
  DesignState s = initialize_state(pb.mesh, pb.opt, seed);
  const int K = pb.opt.K;
  for (int e = 0; e < pb.mesh.num_elements(); ++e) {
    if (!pb.mesh.active(e)) continue;
    const auto [ix, iy, iz] = pb.mesh.element_coords(e);
    const int band = std::min(K - 1, ix * K / std::max(1, pb.mesh.nelx));
    s.rho[e] = 0.55 + 0.15 * u01();
    for (int k = 0; k < K; ++k)
      s.memberships[static_cast<std::size_t>(e) * K + k] =
          (k == band ? 0.7 : 0.15) + 0.1 * u01();
  }
  const DesignVectorLayout L = DesignVectorLayout::create(pb.mesh, K);
  for (int k = 0; k < K; ++k)
    for (int slot : L.q_slots)
      s.orientation_vars[k][slot] = slot < 3 ? 0.2 + 0.6 * u01() : -0.6 + 1.2 * u01();
  return s;
}

json run_metadata(const Problem& pb, const MultiStartResult& res, const RunRecord& best) {
  json starts = json::array();
  for (const RunRecord& r : res.records) {
    const char* st = r.status == RunStatus::Converged       ? "converged"
                     : r.status == RunStatus::MaxIterations ? "max_iterations"
                                                            : "solver_failure";
    starts.push_back({{"seed", r.seed},
                      {"status", st},
                      {"feasible", r.feasible},
                      {"final_F", r.final_F()},
                      {"iterations", r.history.size()},
                      {"error", r.error}});
  }
  return {{"config_hash", pb.config_hash()},
          {"seed", best.seed},
          {"versions",
           {{"mto", kVersion},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                          std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)}}},
          {"final_beta", best.history.empty() ? pb.opt.beta_max : best.history.back().beta},
          {"resolved_config", pb.resolved},
          {"starts", starts},
          {"record", best.to_json()}};
}

}  // namespace

void apply_override(json& doc, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override \"" + assignment + "\" is not of the form key=value");
  std::string key = assignment.substr(0, eq);
  const json value = parse_value(assignment.substr(eq + 1));

  std::string section;
  const std::size_t dot = key.find('.');
  if (dot != std::string::npos) {
    section = key.substr(0, dot);
    key = key.substr(dot + 1);
  } else {
    // Resolve an undotted key against the section that owns it by default.
    const json defaults = default_config();
    for (const auto& [sec, body] : defaults.items())
      if (body.is_object() && body.contains(key)) {
        if (!section.empty())
          throw ConfigError("override key \"" + key + "\" is ambiguous");
        section = sec;
      }
    if (section.empty())
      throw ConfigError("override key \"" + key + "\" matches no config entry");
  }
  doc[section][key] = value;
}

json load_config(const std::string& source, const std::vector<std::string>& sets) {
  json doc;
  if (std::filesystem::exists(source)) {
    std::ifstream f(source);
    if (!f.good()) throw ConfigError("cannot read config file " + source);
    try {
      doc = json::parse(f);
    } catch (const json::parse_error& e) {
      throw ConfigError("config " + source + ": " + e.what());
    }
  } else {
    const auto names = preset_names();
    if (std::find(names.begin(), names.end(), source) == names.end())
      throw ConfigError("no config file or preset named \"" + source +
                        "\"; available presets: " + preset_list());
    doc = json{{"preset", source}};
  }
  for (const std::string& kv : sets) apply_override(doc, kv);
  return doc;
}

VtkSummary validate_vtk(const std::string& path) {
  std::istringstream in(read_file(path));
  auto fail = [&path](const std::string& why) {
    throw std::runtime_error(path + ": " + why);
  };
  std::string line;
  if (!std::getline(in, line) || line.rfind("# vtk DataFile", 0) != 0)
    fail("missing VTK header line");
  if (!std::getline(in, line)) fail("missing title");
  if (!std::getline(in, line) || line != "ASCII") fail("not an ASCII file");
  if (!std::getline(in, line) || line != "DATASET STRUCTURED_POINTS")
    fail("not a structured-points dataset");

  VtkSummary s;
  std::string word;
  in >> word;
  if (word != "DIMENSIONS") fail("missing DIMENSIONS");
  in >> s.dims[0] >> s.dims[1] >> s.dims[2];
  double d;
  in >> word;
  if (word != "ORIGIN") fail("missing ORIGIN");
  in >> d >> d >> d;
  in >> word;
  if (word != "SPACING") fail("missing SPACING");
  in >> d >> d >> d;
  in >> word;
  if (word != "CELL_DATA") fail("missing CELL_DATA");
  in >> s.cells;
  if (!in) fail("malformed header counts");
  int expect = 1;
  for (int c : s.dims) expect *= std::max(1, c - 1);
  if (s.cells != expect) fail("CELL_DATA count does not match DIMENSIONS");

  while (in >> word) {
    if (word != "SCALARS") fail("expected SCALARS, found " + word);
    std::string name, type;
    int comps;
    in >> name >> type >> comps;
    if (!in || comps != 1) fail("malformed SCALARS declaration");
    in >> word;
    if (word != "LOOKUP_TABLE") fail("missing LOOKUP_TABLE");
    in >> word;
    for (int i = 0; i < s.cells; ++i) {
      double v;
      if (!(in >> v) || !std::isfinite(v))
        fail("array " + name + " truncated or non-finite");
    }
    s.arrays.push_back(name);
  }
  if (s.arrays.empty()) fail("no cell arrays");
  return s;
}

void export_fields(const Problem& pb, const Evaluation& ev, const std::string& dir) {
  const Mesh& mesh = pb.mesh;
  const int nel = mesh.num_elements();
  const int K = pb.opt.K;
  std::filesystem::create_directories(dir);
  const std::string base = dir + "/";

  std::vector<double> envelope(nel, 0.0);
  for (const auto& vm : ev.sol.von_mises)
    for (int e = 0; e < nel; ++e) envelope[e] = std::max(envelope[e], vm[e]);

  std::string vtk = vtk_header(mesh, "multicomponent topology fields");
  append_scalars(vtk, "density", ev.fields.rho_tilde);
  for (int k = 0; k < K; ++k) {
    std::vector<double> mk(nel);
    for (int e = 0; e < nel; ++e) mk[e] = ev.fields.m_tilde[static_cast<std::size_t>(e) * K + k];
    append_scalars(vtk, "membership_" + std::to_string(k + 1), mk);
  }
  append_scalars(vtk, "interface", ev.iface.I);
  append_scalars(vtk, "von_mises", envelope);
  write_file(base + "fields.vtk", vtk);
  validate_vtk(base + "fields.vtk");

  std::vector<int> labels(nel, 0);
  for (int e = 0; e < nel; ++e) {
    if (!mesh.active(e) || ev.fields.rho_tilde[e] <= 0.5) continue;
    int arg = 0;
    for (int k = 1; k < K; ++k)
      if (ev.wdmo[static_cast<std::size_t>(e) * K + k] >
          ev.wdmo[static_cast<std::size_t>(e) * K + arg])
        arg = k;
    labels[e] = arg + 1;
  }
  std::string cvtk = vtk_header(mesh, "component assignment (0 = void)");
  append_int_scalars(cvtk, "component", labels);
  write_file(base + "components.vtk", cvtk);
  validate_vtk(base + "components.vtk");

  std::string bv;
  char buf[160];
  for (int k = 0; k < K; ++k) {
    const BuildVector b = recover_build_vector(ev.atens[k]);
    std::snprintf(buf, sizeof buf, "%d %.15g %.15g %.15g%s%s\n", k + 1, b.p[0], b.p[1],
                  b.p[2], b.rank_deficient ? " rank_deficient" : "",
                  b.ambiguous ? " ambiguous" : "");
    bv += buf;
  }
  write_file(base + "build_vectors.txt", bv);

  if (mesh.dim == 2) {
    write_file(base + "rho.pgm", pgm_image(mesh, ev.fields.rho_tilde));
    write_file(base + "interface.pgm", pgm_image(mesh, ev.iface.I));
  }
}

GradientCheck verify_gradients(const Problem& pb, int samples, std::uint64_t seed,
                               const double* tol_override) {
  GradientCheck gc;
  if (tol_override) std::copy(tol_override, tol_override + 3, gc.tol);

  Problem pbc = pb;  // local copy: the stress limit may be recalibrated
  const DesignState s = randomized_state(pbc, seed);
  const EvalSettings set{pbc.opt.beta0, true};
  {
    Evaluator probe(pbc);
    const Evaluation e0 = probe.evaluate(s, set);
    if (pbc.opt.sigma_bar >= 1000.0 && e0.cons.max_interface_stress > 0)
      pbc.opt.sigma_bar = 0.75 * e0.cons.max_interface_stress;
  }
  gc.sigma_bar_used = pbc.opt.sigma_bar;

  Evaluator evtor(pbc);
  const Evaluation ev = evtor.evaluate(s, set);
  const SensitivityBundle sb = evtor.sensitivities(ev);
  const DesignVectorLayout& L = evtor.layout();
  const Eigen::VectorXd* grads[3] = {&sb.dF, &sb.dg1, &sb.dg2};
  const Functional funcs[3] = {Functional::Compliance, Functional::Volume,
                               Functional::StressAggregate};
  // The forward pipeline evaluates with ~1e-13 relative noise, so compliance
  // (value tens, interesting gradients 1e-4 and below) needs the wider step;
  // the near-linear volume constraint is clean at 1e-6.
  const double steps[3] = {1e-4, 1e-6, 1e-4};

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (int r = 0; r < 3; ++r) {
    const Eigen::VectorXd& g = *grads[r];
    const double gmax = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
    // Central differences only resolve entries above their own noise floor.
    const double floor = (r == 1 ? 1e-8 : 1e-6) * (1.0 + gmax);
    std::vector<int> pool[3];
    for (int i = 0; i < L.size(); ++i) {
      if (std::abs(g[i]) < floor) continue;
      pool[i < L.m_offset() ? 0 : (i < L.q_offset() ? 1 : 2)].push_back(i);
    }
    for (int c = 0; c < 3; ++c) {
      for (int n = 0; n < samples && !pool[c].empty(); ++n) {
        const int i = pool[c][rng() % pool[c].size()];
        const double fd = fd_derivative(pbc, s, set, funcs[r], i, steps[r]);
        const double err = std::abs(g[i] - fd) / std::max(std::abs(fd), 1e-8);
        gc.worst[r][c] = std::max(gc.worst[r][c], err);
        ++gc.checked[r][c];
      }
      if (gc.worst[r][c] > gc.tol[r]) gc.pass = false;
    }
  }
  return gc;
}

int cmd_run(const RunOptions& opt) {
  Problem pb;
  try {
    json doc = load_config(opt.source, opt.sets);
    if (opt.seed) doc["optimization"]["rng_seed"] = *opt.seed;
    if (opt.starts) doc["optimization"]["n_starts"] = *opt.starts;
    pb = build_problem(doc);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfigError;
  }

  const MultiStartResult res = multi_start(pb, pb.opt.n_starts);
  if (res.best < 0) {
    for (const RunRecord& r : res.records)
      std::fprintf(stderr, "seed %llu failed: %s\n",
                   static_cast<unsigned long long>(r.seed), r.error.c_str());
    return kExitSolveFailure;
  }
  const RunRecord& best = res.best_record();

  try {
    Evaluator evtor(pb);
    const double final_beta =
        best.history.empty() ? pb.opt.beta_max : best.history.back().beta;
    const Evaluation ev = evtor.evaluate(best.final_state, {final_beta, true});
    export_fields(pb, ev, opt.out_dir);
    write_file(opt.out_dir + "/convergence.csv", convergence_csv(best));
    write_file(opt.out_dir + "/state.json", run_metadata(pb, res, best).dump(2) + "\n");
  } catch (const std::runtime_error& e) {
    std::fprintf(stderr, "output error: %s\n", e.what());
    return kExitFailure;
  }

  const IterationRow& last = best.history.back();
  std::printf("seed %llu: F=%.8g g1=%.3g g2=%.3g iterations=%zu %s%s -> %s\n",
              static_cast<unsigned long long>(best.seed), last.F, last.g1, last.g2,
              best.history.size(),
              best.status == RunStatus::Converged ? "converged" : "max-iterations",
              best.feasible ? "" : " (infeasible)", opt.out_dir.c_str());
  return best.feasible ? kExitOk : kExitInfeasible;
}

int cmd_verify_gradients(const VerifyOptions& opt) {
  Problem pb;
  try {
    pb = build_problem(load_config(opt.source, opt.sets));
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfigError;
  }
  const GradientCheck gc = verify_gradients(pb, opt.samples, opt.seed);
  const char* fn[3] = {"compliance", "volume", "stress"};
  std::printf("stress limit used: %.6g\n", gc.sigma_bar_used);
  std::printf("%-12s %-14s %-14s %-14s tolerance\n", "functional", "density",
              "membership", "orientation");
  for (int r = 0; r < 3; ++r) {
    std::printf("%-12s", fn[r]);
    for (int c = 0; c < 3; ++c)
      std::printf(" %-9.3g (%2d)", gc.worst[r][c], gc.checked[r][c]);
    std::printf(" %.0e\n", gc.tol[r]);
  }
  std::printf("%s\n", gc.pass ? "PASS" : "FAIL");
  return gc.pass ? kExitOk : kExitFailure;
}

int cmd_presets() {
  for (const std::string& name : preset_names()) {
    const Problem pb = build_problem(json{{"preset", name}});
    const std::string zext =
        pb.mesh.dim == 3 ? "x" + std::to_string(pb.mesh.nelz) : std::string();
    std::printf("%-12s %dD %dx%d%s K=%d load_cases=%zu sigma_bar=%g\n", name.c_str(),
                pb.mesh.dim, pb.mesh.nelx, pb.mesh.nely, zext.c_str(), pb.opt.K,
                pb.mesh.load_cases.size(), pb.opt.sigma_bar);
  }
  return kExitOk;
}

int cmd_export(const ExportOptions& opt) {
  try {
    json j;
    try {
      j = json::parse(read_file(opt.state_path));
    } catch (const json::parse_error& e) {
      throw ConfigError(opt.state_path + ": " + e.what());
    }
    if (!j.contains("resolved_config") || !j.contains("record"))
      throw ConfigError(opt.state_path + ": not a run state document");
    const Problem pb = build_problem(j["resolved_config"]);
    const DesignState s = DesignState::from_json(j["record"]["final_state"]);
    const double beta = j.value("final_beta", pb.opt.beta_max);
    Evaluator evtor(pb);
    const Evaluation ev = evtor.evaluate(s, {beta, true});
    export_fields(pb, ev, opt.out_dir);
    return kExitOk;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfigError;
  } catch (const std::runtime_error& e) {
    std::fprintf(stderr, "export error: %s\n", e.what());
    return kExitFailure;
  }
}

}  // namespace mto
