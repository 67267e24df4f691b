#pragma once

#include "immpc/sim.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace immpc {

/// Malformed or inconsistent experiment file.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checks run against a finished SimLog; unset fields are skipped.
struct Assertions {
  /// Realized C x + D u - c at feasible steps.
  std::optional<double> max_violation;
  std::optional<Index> max_infeasible;
  /// ||y - y*||_inf <= settle_tol from `settle_within` samples after every segment start.
  std::optional<double> settle_tol;
  Index settle_within = 150;
  /// y* = 0 instead of the oracle reference.
  bool settle_to_zero = false;
  /// ||y(T) - y*(T)||_2 at the last sample.
  std::optional<double> final_tracking;
  std::optional<double> max_kkt;
  std::optional<double> max_runtime_s;
};

struct Experiment {
  Scenario scenario;
  Assertions assertions;
};

/**
 * JSON document with the sections plant, disturbance, schedule, controller
 * and assertions plus top-level name/steps/seed/noise. Matrices are
 * row-major nested arrays, frequencies in rad/sample. `{"preset":
 * "four_tank"}` as plant builds the quadruple-tank setup from the
 * disturbance section's setpoints. Throws ConfigError.
 */
Experiment parse_experiment(const std::string& text);
Experiment load_experiment(const std::filesystem::path& path);

/// Canonical JSON of the scenario (lossless numbers); round-trips through parse_experiment.
std::string scenario_to_json(const Scenario& sc);
/// FNV-1a of scenario_to_json, hex.
std::string scenario_hash(const Scenario& sc);

/// Header t, x1..xn, u1..um, y1..yp, e_x_norm, e_u_norm, cost, feasible, slack, solve_ms.
void write_csv(std::ostream& os, const SimLog& log);

struct AssertionOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct RunReport {
  std::string scenario;
  std::string scenario_hash;
  Metrics metrics;
  bool converged = false;
  bool noisy = false;
  double runtime_s = 0;
  std::vector<AssertionOutcome> assertions;
  std::filesystem::path csv_path, report_path;
  std::optional<std::filesystem::path> qp_dump_path;

  bool passed() const;
};

std::vector<AssertionOutcome> check_assertions(const Experiment& ex, const SimLog& log, double runtime_s);

/// Tolerance used for "converged" when the experiment sets no settle_tol.
inline constexpr double kConvergedTolerance = 1e-2;

/**
 * Runs the experiment and writes <out>/<name>.csv and <out>/<name>.report.json
 * (plus <name>.qp_t<k>.txt when `dump_qp_at` is set).
 */
RunReport simulate_experiment(const Experiment& ex, const std::filesystem::path& out_dir,
                              std::optional<Index> dump_qp_at = std::nullopt);

std::string report_json(const RunReport& r);

}  // namespace immpc
