// End-to-end acceptance checks. Each test case prints exactly one line
// naming the check and its verdict; long optimization runs are shared
// between cases through a lazy cache so the whole binary stays within the
// declared runtime budgets.
#include <doctest.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mto/cli.hpp"

using namespace mto;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Collects sub-condition failures so every criterion reports one verdict
/// line; details go to the doctest assertion on failure.
struct Criterion {
  bool ok = true;
  std::string detail;

  void expect(bool cond, const std::string& what) {
    if (cond) return;
    ok = false;
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
  void expect_le(double value, double bound, const std::string& what) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s (%.6g > %.6g)", what.c_str(), value, bound);
    expect(value <= bound, buf);
  }
};

void report(int num, const char* name, const Criterion& c) {
  std::printf("[%2d] %-58s %s\n", num, name, c.ok ? "PASS" : "FAIL");
  std::fflush(stdout);
  CHECK_MESSAGE(c.ok, "criterion ", num, ": ", c.detail);
}

// ---------------------------------------------------------------------------
// Shared benchmark runs

struct BenchRun {
  std::string name;
  Problem pb;
  RunRecord rec;
  double minutes = 0;
};

BenchRun optimize(const std::string& name, const std::string& source,
                  const std::vector<std::string>& sets) {
  BenchRun b;
  b.name = name;
  b.pb = build_problem(load_config(source, sets));
  const auto t0 = Clock::now();
  b.rec = run_optimization(b.pb, b.pb.opt.rng_seed);
  b.minutes = seconds_since(t0) / 60.0;
  std::printf("     run %-24s F=%.6g status=%d feasible=%d iters=%zu (%.1f min)\n",
              b.name.c_str(), b.rec.final_F(), static_cast<int>(b.rec.status),
              static_cast<int>(b.rec.feasible), b.rec.history.size(), b.minutes);
  std::fflush(stdout);
  return b;
}

/// Benchmarks shared across criteria, run at most once each. Single-start
/// runs with the preset seed keep the suite inside its time budgets.
struct Cache {
  static Cache& get() {
    static Cache c;
    return c;
  }

  BenchRun& simp_pair(bool reference) {
    // Isotropic single component: the anisotropic machinery must collapse to
    // plain SIMP, so the two paths are compared under identical parameters.
    static const std::vector<std::string> iso = {"n_starts=1",  "K=1",
                                                 "E1=1.0",      "E2=1.0",
                                                 "nu21=0.3",    "nu23=0.3",
                                                 "G12=0.3846153846153846"};
    if (reference) {
      if (simp_ref.name.empty()) {
        simp_ref.name = "cantilever-simp-ref";
        simp_ref.pb = build_problem(load_config("cantilever2d", iso));
        const auto t0 = Clock::now();
        simp_ref.rec = run_reference_simp(simp_ref.pb, simp_ref.pb.opt.rng_seed);
        simp_ref.minutes = seconds_since(t0) / 60.0;
        std::printf("     run %-24s F=%.6g status=%d feasible=%d iters=%zu (%.1f min)\n",
                    simp_ref.name.c_str(), simp_ref.rec.final_F(),
                    static_cast<int>(simp_ref.rec.status),
                    static_cast<int>(simp_ref.rec.feasible), simp_ref.rec.history.size(),
                    simp_ref.minutes);
        std::fflush(stdout);
      }
      return simp_ref;
    }
    if (simp_full.name.empty())
      simp_full = optimize("cantilever-single", "cantilever2d", iso);
    return simp_full;
  }

  BenchRun& bridge(double ej) {
    auto it = bridges.find(ej);
    if (it == bridges.end()) {
      char s[32];
      std::snprintf(s, sizeof s, "Ej=%g", ej);
      it = bridges
               .emplace(ej, optimize("bridge-" + std::string(s), "bridge2d",
                                     {"n_starts=1", s}))
               .first;
    }
    return it->second;
  }

  BenchRun& lbracket_free() {
    if (lb_free.name.empty())
      lb_free = optimize("lbracket-unbounded", "lbracket2d", {"n_starts=1"});
    return lb_free;
  }

  BenchRun& lbracket_bounded() {
    if (lb_bound.name.empty()) {
      const BenchRun& base = lbracket_free();
      sigma_cap = 0.75 * base.rec.history.back().max_interface_stress;
      char s[48];
      std::snprintf(s, sizeof s, "sigma_bar=%.12g", sigma_cap);
      lb_bound = optimize("lbracket-capped", "lbracket2d", {"n_starts=1", s});
    }
    return lb_bound;
  }

  BenchRun& multiload() {
    if (ml3d.name.empty()) ml3d = optimize("multiload3d", "multiload3d", {"n_starts=1"});
    return ml3d;
  }

  std::vector<BenchRun*> all() {
    return {&simp_pair(false), &simp_pair(true), &bridge(1.0),     &bridge(16.0),
            &lbracket_free(),  &lbracket_bounded(), &multiload()};
  }

  double sigma_cap = 0;

 private:
  BenchRun simp_full, simp_ref, lb_free, lb_bound, ml3d;
  std::map<double, BenchRun> bridges;
};

// ---------------------------------------------------------------------------
// Independent oracles for the tensor criteria

constexpr std::array<std::array<int, 2>, 6> kV = {{{0, 0}, {1, 1}, {2, 2}, {1, 2}, {0, 2}, {0, 1}}};

/// 6x6 stress-transformation (Bond) matrix of a rotation: C' = M C M^T.
Mat6 bond_matrix(const Eigen::Matrix3d& Q) {
  Mat6 M;
  for (int A = 0; A < 6; ++A)
    for (int B = 0; B < 6; ++B) {
      const int i = kV[A][0], j = kV[A][1], k = kV[B][0], l = kV[B][1];
      M(A, B) = k == l ? Q(i, k) * Q(j, k) : Q(i, k) * Q(j, l) + Q(i, l) * Q(j, k);
    }
  return M;
}

Eigen::Matrix3d frame_from(const Eigen::Vector3d& p) {
  const Eigen::Vector3d ref =
      std::abs(p.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  const Eigen::Vector3d t1 = p.cross(ref).normalized();
  Eigen::Matrix3d Q;
  Q.col(0) = p;
  Q.col(1) = t1;
  Q.col(2) = p.cross(t1);
  return Q;
}

}  // namespace

TEST_CASE("01 tensor rotation matches Voigt transformation oracle") {
  Criterion c;
  const auto t0 = Clock::now();
  const StiffnessTensor Ct = transverse_from_engineering(MaterialSpec{});
  const RotationCoefficients B = rotation_coefficients(Ct);
  const double scale = Ct.max_abs();
  std::mt19937_64 rng(101);
  std::normal_distribution<double> nd;
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::Vector3d p(nd(rng), nd(rng), nd(rng));
    p.normalize();
    const Mat6 M = bond_matrix(frame_from(p));
    const Mat6 ref = M * Ct.C * M.transpose();
    const StiffnessTensor got = rotate_tensor(B, p * p.transpose());
    worst = std::max(worst, (got.C - ref).cwiseAbs().maxCoeff() / scale);
  }
  c.expect_le(worst, 1e-10, "rotation error vs 6x6 transformation oracle");
  c.expect_le(seconds_since(t0), 1.0, "rotation oracle runtime (s)");
  report(1, "tensor rotation vs Voigt transformation oracle", c);
}

TEST_CASE("02 orientation tensor invariants over the design box") {
  Criterion c;
  const HeavisideSpec spec{8.0, 0.0, HeavisideVariant::Symmetric};
  std::mt19937_64 rng(202);
  auto u01 = [&rng] { return (rng() >> 11) * 0x1.0p-53; };
  double worst_trace = 0, worst_couple = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::array<double, 6> q;
    for (int s = 0; s < 3; ++s) q[s] = u01();
    for (int s = 3; s < 6; ++s) q[s] = 2.0 * u01() - 1.0;
    const OrientationTensor t = assemble_orientation(q, spec, 3);
    worst_trace = std::max(worst_trace, std::abs(t.trace() - 1.0));
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j)
        worst_couple = std::max(worst_couple, std::abs(t.a(i, j)) -
                                                  std::sqrt(t.a(i, i) * t.a(j, j)));
  }
  c.expect_le(worst_trace, 1e-12, "trace deviation from 1");
  c.expect_le(worst_couple, 1e-12, "off-diagonal coupling bound");

  double worst_minor = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::array<double, 6> q = {u01(), u01(), 0.0, 0.0, 0.0, 0.0};
    for (int s = 3; s < 6; ++s) q[s] = rng() & 1 ? 1.0 : -1.0;
    const OrientationTensor t = assemble_orientation(q, spec, 3);
    for (double m : t.principal_minors()) worst_minor = std::max(worst_minor, std::abs(m));
  }
  c.expect_le(worst_minor, 1e-9, "principal minors at saturated couplings");
  report(2, "orientation tensor invariants and saturation", c);
}

TEST_CASE("03 adjoint gradients match finite differences") {
  Criterion c;
  const auto t0 = Clock::now();
  const Problem pb = build_problem(load_config("gradcheck2d", {}));
  const GradientCheck gc = verify_gradients(pb, 30, 1);
  for (int r = 0; r < 3; ++r) {
    const char* fn[3] = {"compliance", "volume", "stress"};
    for (int col = 0; col < 3; ++col)
      c.expect_le(gc.worst[r][col], gc.tol[r],
                  std::string(fn[r]) + " gradient class " + std::to_string(col));
  }
  c.expect(gc.checked[0][0] > 0 && gc.checked[0][1] > 0 && gc.checked[0][2] > 0,
           "compliance classes sampled");
  c.expect(gc.checked[2][0] > 0 && gc.checked[2][1] > 0 && gc.checked[2][2] > 0,
           "stress classes sampled");
  c.expect_le(seconds_since(t0), 300.0, "gradient check runtime (s)");
  report(3, "adjoint gradients vs central finite differences", c);
}

TEST_CASE("04 single-component isotropic run reproduces plain SIMP") {
  Criterion c;
  BenchRun& full = Cache::get().simp_pair(false);
  BenchRun& ref = Cache::get().simp_pair(true);
  c.expect(full.rec.status == RunStatus::Converged, "full path converged");
  c.expect(ref.rec.status == RunStatus::Converged, "reference path converged");
  c.expect(full.rec.feasible && ref.rec.feasible, "both runs feasible");
  const double rel = std::abs(full.rec.final_F() - ref.rec.final_F()) /
                     std::abs(ref.rec.final_F());
  c.expect_le(rel, 0.01, "relative compliance gap vs plain SIMP");
  report(4, "single isotropic component reproduces plain SIMP", c);
}

TEST_CASE("05 bridge compliance drops with a stiffer joint") {
  Criterion c;
  BenchRun& soft = Cache::get().bridge(1.0);
  BenchRun& stiff = Cache::get().bridge(16.0);
  c.expect(soft.rec.feasible, "soft-joint run feasible");
  c.expect(stiff.rec.feasible, "stiff-joint run feasible");
  c.expect(stiff.rec.final_F() < soft.rec.final_F(),
           "stiffer joint must lower compliance");
  const double ratio = stiff.rec.final_F() / soft.rec.final_F();
  c.expect(ratio >= 0.3 && ratio <= 0.9,
           "compliance ratio outside [0.3, 0.9]: " + std::to_string(ratio));
  c.expect_le(soft.minutes, 45.0, "soft-joint runtime (min)");
  c.expect_le(stiff.minutes, 45.0, "stiff-joint runtime (min)");
  report(5, "bridge study: stiffer joint lowers compliance", c);
}

TEST_CASE("06 interface stress cap binds without wrecking stiffness") {
  Criterion c;
  BenchRun& free = Cache::get().lbracket_free();
  BenchRun& bound = Cache::get().lbracket_bounded();
  const double cap = Cache::get().sigma_cap;
  c.expect(cap > 0, "unconstrained run must exhibit interface stress");
  for (const IterationRow& row : free.rec.history)
    if (std::abs(row.g2 + free.pb.opt.eps_bar) > 1e-6) {
      c.expect(false, "unbounded run saw a nonzero stress aggregate");
      break;
    }
  c.expect(bound.rec.feasible, "capped run feasible");
  c.expect_le(bound.rec.history.back().max_interface_stress, 1.05 * cap,
              "max interface stress vs cap");
  c.expect_le(bound.rec.final_F(), 1.25 * free.rec.final_F(),
              "compliance increase under the cap");
  report(6, "stress cap holds with bounded compliance increase", c);
}

TEST_CASE("07 interface indicator marks component boundaries only") {
  Criterion c;
  Mesh m;
  m.dim = 2;
  m.nelx = 48;
  m.nely = 16;
  m.element_size = 1.0;
  const int K = 2;
  DesignState s;
  s.rho.assign(m.num_elements(), 1.0);
  s.memberships.assign(static_cast<std::size_t>(m.num_elements()) * K, 0.0);
  for (int e = 0; e < m.num_elements(); ++e) {
    const auto [ix, iy, iz] = m.element_coords(e);
    s.memberships[static_cast<std::size_t>(e) * K + (ix < 24 ? 0 : 1)] = 1.0;
  }
  s.orientation_vars.resize(K);

  const double radius = 2.5 * m.element_size;
  HelmholtzFilter filter(m, radius);
  GradientSampler sampler(m);
  const HeavisideSpec proj{8.0, 0.5, HeavisideVariant::Standard};
  const HeavisideSpec ispec{8.0, 0.1, HeavisideVariant::Shifted};
  const FilteredFields f = compute_filtered_fields(s, m, filter, sampler, 3.0, proj);
  const InterfaceField iface = interface_indicator(f, m, ispec);

  double band_min = 1.0, far_max = 0.0;
  for (int e = 0; e < m.num_elements(); ++e) {
    const auto [ix, iy, iz] = m.element_coords(e);
    const double dist = std::abs(ix + 0.5 - 24.0);  // centroid distance to seam
    if (ix == 23 || ix == 24) band_min = std::min(band_min, iface.I[e]);
    if (dist >= 3.0 * radius) far_max = std::max(far_max, iface.I[e]);
  }
  c.expect(band_min == 1.0, "indicator saturates on the seam band");
  c.expect_le(far_max, 0.01, "indicator three filter radii away");

  for (int e = 0; e < m.num_elements(); ++e) {
    s.memberships[static_cast<std::size_t>(e) * K] = 1.0;
    s.memberships[static_cast<std::size_t>(e) * K + 1] = 0.0;
  }
  const InterfaceField single =
      interface_indicator(compute_filtered_fields(s, m, filter, sampler, 3.0, proj), m, ispec);
  double single_max = 0;
  for (double v : single.I) single_max = std::max(single_max, v);
  c.expect(single_max == 0.0, "single component must have no interface");
  report(7, "interface indicator localization", c);
}

TEST_CASE("08 all benchmarks converge to near-discrete feasible designs") {
  Criterion c;
  for (BenchRun* b : Cache::get().all()) {
    const IterationRow& last = b->rec.history.back();
    c.expect_le(last.gray, 0.05, b->name + " gray level");
    c.expect_le(last.membership_disc, 0.1, b->name + " membership discreteness");
    c.expect_le(last.g1, 1e-3, b->name + " volume constraint");
    c.expect_le(last.g2, 1e-3, b->name + " stress constraint");
  }
  report(8, "discreteness and feasibility across all benchmarks", c);
}

TEST_CASE("09 3D multi-load run stays in budget and exports cleanly") {
  Criterion c;
  BenchRun& b = Cache::get().multiload();
  c.expect_le(b.minutes, 120.0, "3D runtime (min)");
  c.expect(b.rec.feasible, "3D run feasible");

  Evaluator evtor(b.pb);
  const Evaluation ev =
      evtor.evaluate(b.rec.final_state, {b.rec.history.back().beta, true});
  const auto dir = std::filesystem::temp_directory_path() / "mto_acceptance_3d";
  std::filesystem::remove_all(dir);
  export_fields(b.pb, ev, dir.string());
  const VtkSummary vs = validate_vtk((dir / "fields.vtk").string());
  c.expect(vs.dims == std::array<int, 3>{25, 25, 25}, "VTK point dimensions");
  c.expect(vs.cells == 24 * 24 * 24, "VTK cell count");
  c.expect(vs.arrays.size() >= 4, "VTK array count");
  for (int k = 0; k < b.pb.opt.K; ++k) {
    const BuildVector bv = recover_build_vector(ev.atens[k]);
    c.expect_le(std::abs(bv.p.norm() - 1.0), 1e-8,
                "build vector norm, component " + std::to_string(k + 1));
  }
  report(9, "3D multi-load smoke test", c);
}

TEST_CASE("10 identical config and seed reproduce the run exactly") {
  Criterion c;
  const Problem pb =
      build_problem(load_config("gradcheck2d", {"max_iter=40", "beta_period=12"}));
  const RunRecord a = run_optimization(pb, 5);
  const RunRecord b = run_optimization(pb, 5);
  c.expect(convergence_csv(a) == convergence_csv(b), "convergence histories differ");
  c.expect(!a.history.empty(), "history recorded");
  report(10, "bitwise deterministic reruns", c);
}
