#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mto/adjoint.hpp"
#include "mto/optimizer.hpp"
#include "mto/problem.hpp"

namespace mto {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;       // tolerance or I/O failure
inline constexpr int kExitConfigError = 2;   // bad config, unknown preset
inline constexpr int kExitSolveFailure = 3;  // equation solver failed / no run finished
inline constexpr int kExitInfeasible = 4;    // finished but constraints not met

/// Applies one "key=value" override; "a.b=v" addresses section a, key b, and
/// an undotted key is resolved against the section that owns it in the
/// default config. Values parse as JSON when possible, else as strings.
/// Throws ConfigError for unknown or ambiguous keys.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Config from a JSON file path or a preset name, with overrides applied.
/// Throws ConfigError (unknown sources name the available presets).
nlohmann::json load_config(const std::string& source, const std::vector<std::string>& sets);

/// Shape summary returned by the structured-points self-check.
struct VtkSummary {
  std::array<int, 3> dims{};  // point dimensions
  int cells = 0;
  std::vector<std::string> arrays;
};

/// Re-reads a legacy ASCII VTK structured-points file and verifies header,
/// dimensions, and that every CELL_DATA array holds `cells` finite values.
/// Throws std::runtime_error describing the first violation.
VtkSummary validate_vtk(const std::string& path);

/// Writes the visualization bundle for one evaluated design into `dir`:
///   fields.vtk        density, per-component memberships, interface,
///                     von Mises envelope (cell data)
///   components.vtk    0 = void, 1..K = argmax weight on solid elements
///   build_vectors.txt one unit direction per component
///   rho.pgm, interface.pgm (2D only) grayscale previews, 255 * field
/// Every VTK file is re-read and shape-checked before returning.
/// Throws std::runtime_error when the directory cannot be written.
void export_fields(const Problem& pb, const Evaluation& ev, const std::string& dir);

/// Worst relative adjoint-vs-central-difference errors per functional and
/// variable class, sampled over `samples` measurable entries per cell.
struct GradientCheck {
  // rows: compliance, volume, stress aggregate; columns: density,
  // membership, orientation
  double worst[3][3] = {};
  int checked[3][3] = {};
  double tol[3] = {1e-3, 1e-3, 1e-2};
  double sigma_bar_used = 0;  // stress limit after the auto-calibration
  bool pass = true;
};

/// Runs the finite-difference oracle against the adjoint gradients on a
/// randomized interior state of the given problem. A far stress limit
/// (>= 1000) is first recalibrated to 0.75x the state's peak interface
/// stress so the aggregate has measurable gradients.
GradientCheck verify_gradients(const Problem& pb, int samples, std::uint64_t seed,
                               const double* tol_override = nullptr);

struct RunOptions {
  std::string source;  // config path or preset name
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> starts;
  std::string out_dir = "mto-out";
};

struct VerifyOptions {
  std::string source = "gradcheck2d";
  std::vector<std::string> sets;
  int samples = 30;
  std::uint64_t seed = 1;
};

struct ExportOptions {
  std::string state_path;
  std::string out_dir = "mto-out";
};

int cmd_run(const RunOptions& opt);
int cmd_verify_gradients(const VerifyOptions& opt);
int cmd_presets();
int cmd_export(const ExportOptions& opt);

}  // namespace mto
