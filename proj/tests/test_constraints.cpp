#include <doctest.h>

#include <random>

#include "mto/constraints.hpp"

using namespace mto;

namespace {

Mesh grid2d(int nx, int ny, double h) {
  Mesh m;
  m.dim = 2;
  m.nelx = nx;
  m.nely = ny;
  m.element_size = h;
  return m;
}

const HeavisideSpec kStressAgg{16.0, 0.0, HeavisideVariant::Symmetric};

}  // namespace

TEST_CASE("volume constraint measures the active volume fraction") {
  Mesh m = grid2d(10, 10, 0.1);
  std::vector<double> rho(100, 0.35);
  CHECK(volume_constraint(rho, m, 0.35) == doctest::Approx(0.0).epsilon(1e-12));
  rho.assign(100, 1.0);
  CHECK(volume_constraint(rho, m, 0.35) == doctest::Approx(0.65).epsilon(1e-12));
  rho.assign(100, 0.0);
  CHECK(volume_constraint(rho, m, 0.35) == -0.35);

  // masked elements are excluded even if their entries are garbage
  m.domain_mask.assign(100, 1);
  for (int e = 40; e < 60; ++e) m.domain_mask[e] = 0;
  rho.assign(100, 1.0);
  for (int e = 40; e < 60; ++e) rho[e] = 7.0;
  CHECK(volume_constraint(rho, m, 0.35) == doctest::Approx(0.65).epsilon(1e-12));
}

TEST_CASE("stress constraint saturates, aggregates and reports diagnostics") {
  Mesh m = grid2d(1, 1, 1.0);
  std::vector<double> I{1.0};

  SUBCASE("element at twice the limit") {
    std::vector<std::vector<double>> vm{{2.0}};
    ConstraintValues c = stress_constraint(I, vm, 1.0, 0.01, kStressAgg, m);
    CHECK(c.g2 == doctest::Approx(4.0 - 0.01).epsilon(1e-14));
    CHECK(c.max_interface_stress == 2.0);
    CHECK(c.interface_volume == 1.0);
  }
  SUBCASE("stresses comfortably below the limit vanish from g2") {
    std::vector<std::vector<double>> vm{{0.5}};
    ConstraintValues c = stress_constraint(I, vm, 1.0, 0.01, kStressAgg, m);
    CHECK(c.g2 == doctest::Approx(-0.01).epsilon(1e-5));
    CHECK(c.max_interface_stress == 0.5);  // diagnostic still reports the raw max
  }
  SUBCASE("no interface means no stress constraint") {
    std::vector<std::vector<double>> vm{{50.0}};
    ConstraintValues c = stress_constraint({0.0}, vm, 1.0, 0.01, kStressAgg, m);
    CHECK(c.g2 == -0.01);
    CHECK(c.max_interface_stress == 0.0);
    CHECK(c.interface_volume == 0.0);
  }
}

TEST_CASE("stress aggregation is monotone in stress and linear in the indicator") {
  Mesh m = grid2d(4, 3, 0.5);
  std::mt19937 rng(71);
  std::uniform_real_distribution<double> uvm(0.2, 1.8), ui(0.0, 1.0);
  std::vector<double> I(12);
  std::vector<std::vector<double>> vm(1, std::vector<double>(12));
  for (auto& x : I) x = ui(rng);
  for (auto& s : vm[0]) s = uvm(rng);

  const double sigma_bar = 1.0, eps_bar = 0.01;
  ConstraintValues base = stress_constraint(I, vm, sigma_bar, eps_bar, kStressAgg, m);
  for (int e = 0; e < 12; ++e) {
    auto vup = vm;
    vup[0][e] += 0.3;
    ConstraintValues up = stress_constraint(I, vup, sigma_bar, eps_bar, kStressAgg, m);
    CHECK(up.g2 >= base.g2);
  }

  std::vector<double> half = I;
  for (auto& x : half) x *= 0.5;
  ConstraintValues hc = stress_constraint(half, vm, sigma_bar, eps_bar, kStressAgg, m);
  CHECK(base.g2 + eps_bar == doctest::Approx(2.0 * (hc.g2 + eps_bar)).epsilon(1e-12));

  // a second identical load case doubles the aggregated excess
  std::vector<std::vector<double>> two{vm[0], vm[0]};
  ConstraintValues tc = stress_constraint(I, two, sigma_bar, eps_bar, kStressAgg, m);
  CHECK(tc.g2 + eps_bar == doctest::Approx(2.0 * (base.g2 + eps_bar)).epsilon(1e-12));

  // diagnostics: max over interface elements only (I >= 0.5)
  double expect = 0;
  for (int e = 0; e < 12; ++e)
    if (I[e] >= 0.5 && vm[0][e] > expect) expect = vm[0][e];
  CHECK(base.max_interface_stress == expect);
  double vol = 0;
  for (int e = 0; e < 12; ++e) vol += I[e] * 0.25;
  CHECK(base.interface_volume == doctest::Approx(vol).epsilon(1e-12));
}
