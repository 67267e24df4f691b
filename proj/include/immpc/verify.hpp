#pragma once

#include "immpc/oracle.hpp"
#include "immpc/sim.hpp"

#include <random>
#include <string>
#include <vector>

namespace immpc {

struct CheckResult {
  std::string name;
  double value = 0;
  double tolerance = 0;
  bool passed = false;
  std::string detail;
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckResult> checks;

  bool passed() const;
  /// Adds a check that passes when value <= tolerance.
  CheckResult& add_bound(std::string name, double value, double tolerance, std::string detail = {});
};

std::string to_json(const SuiteReport& r);

// Prediction consistency on random plants.

struct PredictionInstance {
  MPCConfig cfg;
  DisturbanceChannel<double> dist;
};

/// Random plant (n <= 6, m <= 3, p <= 3) with a disturbance of dimension q <= 3 and a
/// random numerator of degree <= 1 on both filters.
PredictionInstance random_prediction_instance(std::mt19937_64& rng);

/**
 * Runs the true plant for nn + 1 samples under random inputs, predicts
 * `horizon` samples ahead from the recorded history with random e~u and
 * replays the predicted inputs on the plant. Largest |x - x_pred|, |y - y_pred|
 * relative to max(1, |x|, |y|).
 */
double prediction_rollout_residual(const PredictionInstance& inst, std::mt19937_64& rng, Index horizon = 20);

SuiteReport suite_theorem1(std::uint64_t seed = 1, int instances = 20);

// Velocity form: p(z) = z - 1 written out directly in (du, dx).

/// Plant, weights and constraints of the velocity-form comparison (n = 2, m = p = 1).
Scenario velocity_scenario(Index steps = 100);

/**
 * Condensed MPC over du_0..du_N with x_k = x_0 + sum dx, u_k = u_{-1} + sum du,
 * y_k = y_0 + C (x_k - x_0) and the same stage weights; returns u_0.
 */
VectorXd velocity_mpc_u0(const MPCConfig& cfg, const VectorXd& x, const VectorXd& x_prev, const VectorXd& y,
                         const VectorXd& u_prev, double* kkt = nullptr);

struct VelocityComparison {
  double max_difference = 0;
  double max_kkt = 0;
  Index steps = 0;
  /// Steps at which some input bound was active.
  Index constrained_steps = 0;
};

VelocityComparison velocity_equivalence(Index steps = 100);

SuiteReport suite_velocity();

// Recursive feasibility and convergence along a closed loop.

struct FeasibilityTrace {
  SimLog log;
  double runtime_s = 0;
  /// Over steps where the previous problem was solved unsoftened after warmup.
  double max_candidate_eq = 0;
  double max_candidate_ineq = 0;
  Index candidate_checks = 0;
  /// max of J(t+1) - J(t) + l(t) over steps where w followed S.
  double max_decrease_excess = -1e300;
  Index decrease_checks = 0;
  /// ||y(T) - y*(T)||_2
  double final_tracking = 0;
  double max_kkt = 0;
  double max_violation = 0;
};

FeasibilityTrace trace_feasibility(const Scenario& sc);

SuiteReport suite_theorem2();

// Linearity of the unconstrained law.

/// u0* of the problem without inequality rows, solved directly.
VectorXd unconstrained_u0(const MPCConfig& cfg, const PredictionHistory& h);

/// Scalar plant x+ = 0.9 x + 0.5 u + 0.3, y = x - 0.5 with the constant-only internal model.
MPCConfig scalar_gain_config();

/// max |u0*(h1 + h2) - u0*(h1) - u0*(h2) + u0*(0)| and |u0*(h) - (K h + offset)| over random pairs.
double gain_superposition_residual(const MPCConfig& cfg, std::mt19937_64& rng, int pairs);

/// |y| after `steps` samples of the scalar plant under u = K h + offset.
double static_gain_rejection(Index steps = 300);

/// Unreachable references: steady offset equal to the oracle's and (x, u) in Z.
SuiteReport suite_oracle();

/// Throws std::invalid_argument for an unknown name.
SuiteReport run_suite(const std::string& name);
const std::vector<std::string>& suite_names();

}  // namespace immpc
