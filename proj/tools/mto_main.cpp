#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mto/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Multicomponent topology optimization with build-direction design"};
  app.require_subcommand(1);

  mto::RunOptions run;
  auto* crun = app.add_subcommand("run", "Optimize a configuration and export results");
  crun->add_option("config", run.source, "Config file path or preset name")->required();
  std::optional<std::uint64_t> seed;
  std::optional<int> starts;
  crun->add_option("--seed", seed, "Override optimization.rng_seed");
  crun->add_option("--starts", starts, "Override optimization.n_starts");
  crun->add_option("--out", run.out_dir, "Output directory (default mto-out)");
  crun->add_option("--set", run.sets, "Config override key=value (repeatable)");

  mto::VerifyOptions ver;
  auto* cver = app.add_subcommand("verify-gradients",
                                  "Compare adjoint gradients against finite differences");
  cver->add_option("config", ver.source, "Config file path or preset name");
  cver->add_option("--samples", ver.samples, "Samples per variable class");
  cver->add_option("--seed", ver.seed, "Random state seed");
  cver->add_option("--set", ver.sets, "Config override key=value (repeatable)");

  auto* cpre = app.add_subcommand("presets", "List built-in example configurations");

  mto::ExportOptions exp;
  auto* cexp = app.add_subcommand("export", "Re-export fields from a saved state.json");
  cexp->add_option("state", exp.state_path, "Path to a state.json from a run")->required();
  cexp->add_option("--out", exp.out_dir, "Output directory (default mto-out)");

  CLI11_PARSE(app, argc, argv);

  if (crun->parsed()) {
    run.seed = seed;
    run.starts = starts;
    return mto::cmd_run(run);
  }
  if (cver->parsed()) return mto::cmd_verify_gradients(ver);
  if (cpre->parsed()) return mto::cmd_presets();
  if (cexp->parsed()) return mto::cmd_export(exp);
  return mto::kExitFailure;
}
