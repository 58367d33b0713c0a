#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mto/cli.hpp"

using namespace mto;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mto_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary);
  f << content;
  REQUIRE(f.good());
}

/// Left-edge-clamped cantilever document with a tip load, small enough for
/// end-to-end command tests.
json tiny_cantilever_doc(int nelx, int nely, int K) {
  json fixed = json::array();
  for (int iy = 0; iy <= nely; ++iy) {
    const int n = iy * (nelx + 1);
    fixed.push_back(2 * n);
    fixed.push_back(2 * n + 1);
  }
  const int tip = 2 * ((nely / 2) * (nelx + 1) + nelx) + 1;
  return {{"mesh",
           {{"dim", 2},
            {"nelx", nelx},
            {"nely", nely},
            {"element_size", 1.0},
            {"fixed_dofs", fixed},
            {"load_cases", json::array({json::array({json::array({tip, -1.0})})})}}},
          {"optimization", {{"K", K}, {"n_starts", 1}, {"rng_seed", 7}}}};
}

}  // namespace

TEST_CASE("overrides address sections with and without dots") {
  json doc = {{"preset", "cantilever2d"}};
  apply_override(doc, "sigma_bar=15.5");
  apply_override(doc, "material.E1=4.0");
  apply_override(doc, "mesh.nelx=24");
  apply_override(doc, "vol_limit=0.42");
  CHECK(doc["optimization"]["sigma_bar"] == doctest::Approx(15.5));
  CHECK(doc["material"]["E1"] == doctest::Approx(4.0));
  CHECK(doc["mesh"]["nelx"] == 24);
  CHECK(doc["optimization"]["vol_limit"] == doctest::Approx(0.42));

  apply_override(doc, "fixed_dofs=[0,1,2]");
  CHECK(doc["mesh"]["fixed_dofs"] == json::array({0, 1, 2}));

  // Unparseable values stay strings; unknown and malformed keys are rejected.
  apply_override(doc, "output.tag=nightly");
  CHECK(doc["output"]["tag"] == "nightly");
  CHECK_THROWS_AS(apply_override(doc, "no_such_key=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "justakey"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "=5"), ConfigError);
}

TEST_CASE("config loading covers files, presets, and failures") {
  const fs::path dir = fresh_dir("cfg");
  const fs::path file = dir / "c.json";
  spit(file, tiny_cantilever_doc(6, 4, 2).dump());

  const json from_file = load_config(file.string(), {"sigma_bar=9"});
  CHECK(from_file["mesh"]["nelx"] == 6);
  CHECK(from_file["optimization"]["sigma_bar"] == doctest::Approx(9.0));

  const json from_preset = load_config("bridge2d", {});
  CHECK(from_preset["preset"] == "bridge2d");

  try {
    load_config("no_such_source", {});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("cantilever2d") != std::string::npos);
  }

  spit(dir / "broken.json", "{ not json");
  CHECK_THROWS_AS(load_config((dir / "broken.json").string(), {}), ConfigError);
}

TEST_CASE("field export writes validated VTK, images, and build vectors") {
  const Problem pb = build_problem(tiny_cantilever_doc(6, 4, 2));
  Evaluator evtor(pb);
  const DesignState s = initialize_state(pb.mesh, pb.opt, 3);
  const Evaluation ev = evtor.evaluate(s, {pb.opt.beta0, true});

  const fs::path dir = fresh_dir("export");
  export_fields(pb, ev, dir.string());

  const VtkSummary fsum = validate_vtk((dir / "fields.vtk").string());
  CHECK(fsum.dims[0] == 7);
  CHECK(fsum.dims[1] == 5);
  CHECK(fsum.dims[2] == 1);
  CHECK(fsum.cells == 24);
  REQUIRE(fsum.arrays.size() == 5);  // density, two memberships, interface, stress
  CHECK(fsum.arrays[0] == "density");
  CHECK(fsum.arrays[1] == "membership_1");
  CHECK(fsum.arrays[3] == "interface");
  CHECK(fsum.arrays[4] == "von_mises");

  const VtkSummary csum = validate_vtk((dir / "components.vtk").string());
  REQUIRE(csum.arrays.size() == 1);
  CHECK(csum.arrays[0] == "component");
  {
    std::istringstream in(slurp(dir / "components.vtk"));
    std::string line;
    while (std::getline(in, line) && line.rfind("LOOKUP_TABLE", 0) != 0) {
    }
    int label, count = 0;
    while (in >> label) {
      CHECK(label >= 0);
      CHECK(label <= pb.opt.K);
      ++count;
    }
    CHECK(count == 24);
  }

  {
    std::istringstream in(slurp(dir / "build_vectors.txt"));
    int k, lines = 0;
    double x, y, z;
    while (in >> k >> x >> y >> z) {
      in.ignore(256, '\n');
      CHECK(k == ++lines);
      CHECK(std::abs(std::sqrt(x * x + y * y + z * z) - 1.0) <= 1e-8);
    }
    CHECK(lines == pb.opt.K);
  }

  {
    std::istringstream in(slurp(dir / "rho.pgm"));
    std::string magic;
    int w, h, maxv, pixel;
    in >> magic >> w >> h >> maxv;
    CHECK(magic == "P2");
    CHECK(w == 6);
    CHECK(h == 4);
    CHECK(maxv == 255);
    // Raster order is top row first; the top-left pixel is element (0, nely-1).
    REQUIRE(static_cast<bool>(in >> pixel));
    const double expect = ev.fields.rho_tilde[pb.mesh.element_index(0, 3)];
    CHECK(pixel == static_cast<int>(std::lround(255.0 * expect)));
    int count = 1;
    while (in >> pixel) {
      CHECK(pixel >= 0);
      CHECK(pixel <= 255);
      ++count;
    }
    CHECK(count == 24);
  }
  CHECK(fs::exists(dir / "interface.pgm"));

  // The validator must reject files whose arrays do not cover every cell.
  std::string truncated = slurp(dir / "fields.vtk");
  truncated.resize(truncated.size() / 2);
  spit(dir / "bad.vtk", truncated);
  CHECK_THROWS_AS(validate_vtk((dir / "bad.vtk").string()), std::runtime_error);
  spit(dir / "notvtk.vtk", "hello\nworld\n");
  CHECK_THROWS_AS(validate_vtk((dir / "notvtk.vtk").string()), std::runtime_error);
}

TEST_CASE("gradient verification accepts adjoints and honors tolerances") {
  const Problem pb = build_problem(json{{"preset", "gradcheck2d"}});
  const GradientCheck gc = verify_gradients(pb, 6, 5);
  CHECK(gc.pass);
  CHECK(gc.sigma_bar_used > 0.0);
  CHECK(gc.sigma_bar_used < 1000.0);  // recalibrated from the unbounded default
  for (int c = 0; c < 3; ++c) {
    CHECK(gc.checked[0][c] > 0);
    CHECK(gc.worst[0][c] <= 1e-3);
    CHECK(gc.worst[2][c] <= 1e-2);
  }
  // Volume is independent of memberships and orientations: nothing measurable.
  CHECK(gc.checked[1][0] > 0);
  CHECK(gc.worst[1][0] <= 1e-3);
  CHECK(gc.checked[1][1] == 0);
  CHECK(gc.checked[1][2] == 0);

  const double impossible[3] = {1e-18, 1e-18, 1e-18};
  const GradientCheck strict = verify_gradients(pb, 2, 5, impossible);
  CHECK_FALSE(strict.pass);
}

TEST_CASE("run command produces a complete, reproducible output directory") {
  json doc = tiny_cantilever_doc(10, 6, 2);
  doc["optimization"]["max_iter"] = 14;
  doc["optimization"]["n_starts"] = 2;
  const fs::path dir = fresh_dir("run");
  spit(dir / "cfg.json", doc.dump());

  RunOptions opt;
  opt.source = (dir / "cfg.json").string();
  opt.out_dir = (dir / "out").string();
  CHECK(cmd_run(opt) == kExitOk);

  for (const char* f : {"fields.vtk", "components.vtk", "build_vectors.txt", "rho.pgm",
                        "interface.pgm", "convergence.csv", "state.json"})
    CHECK(fs::exists(dir / "out" / f));

  const json st = json::parse(slurp(dir / "out" / "state.json"));
  const Problem pb = build_problem(json::parse(slurp(dir / "cfg.json")));
  CHECK(st["config_hash"].get<std::uint64_t>() == pb.config_hash());
  CHECK(st["record"]["history"].size() == 14);
  CHECK(st["starts"].size() == 2);
  CHECK(st["versions"].contains("mto"));
  const std::string csv = slurp(dir / "out" / "convergence.csv");
  CHECK(csv.rfind("iter,F,g1,g2,", 0) == 0);

  // Same config and seed again: byte-identical convergence history.
  RunOptions again = opt;
  again.out_dir = (dir / "out2").string();
  CHECK(cmd_run(again) == kExitOk);
  CHECK(slurp(dir / "out2" / "convergence.csv") == csv);

  ExportOptions ex;
  ex.state_path = (dir / "out" / "state.json").string();
  ex.out_dir = (dir / "re").string();
  CHECK(cmd_export(ex) == kExitOk);
  CHECK(validate_vtk((dir / "re" / "fields.vtk").string()).cells == 60);

  ExportOptions bad;
  bad.state_path = (dir / "cfg.json").string();  // valid JSON, wrong document
  bad.out_dir = (dir / "re2").string();
  CHECK(cmd_export(bad) == kExitConfigError);
}

TEST_CASE("command exit codes distinguish config, solver, and feasibility failures") {
  RunOptions unknown;
  unknown.source = "definitely_not_a_preset";
  CHECK(cmd_run(unknown) == kExitConfigError);

  const fs::path dir = fresh_dir("fail");

  // A single pinned dof leaves rigid-body modes: every start must fail.
  json loose = tiny_cantilever_doc(6, 4, 1);
  loose["mesh"]["fixed_dofs"] = json::array({0});
  loose["optimization"]["max_iter"] = 4;
  spit(dir / "loose.json", loose.dump());
  RunOptions ropt;
  ropt.source = (dir / "loose.json").string();
  ropt.out_dir = (dir / "loose_out").string();
  CHECK(cmd_run(ropt) == kExitSolveFailure);

  // An absurd stress limit cannot be met within a three-iteration budget.
  json tight = tiny_cantilever_doc(6, 4, 2);
  tight["optimization"]["max_iter"] = 3;
  tight["optimization"]["sigma_bar"] = 1e-6;
  tight["optimization"]["stress_start_iter"] = 0;
  spit(dir / "tight.json", tight.dump());
  RunOptions topt;
  topt.source = (dir / "tight.json").string();
  topt.out_dir = (dir / "tight_out").string();
  CHECK(cmd_run(topt) == kExitInfeasible);

  VerifyOptions bad;
  bad.source = "nope";
  CHECK(cmd_verify_gradients(bad) == kExitConfigError);

  VerifyOptions ok;
  ok.samples = 2;
  ok.seed = 9;
  CHECK(cmd_verify_gradients(ok) == kExitOk);

  CHECK(cmd_presets() == kExitOk);
}
