#pragma once

#include "immpc/mpc.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace immpc {

/// At `time`, w(time)[index] = value for every listed pair (a model break).
struct ScheduleEdit {
  Index time = 0;
  std::vector<std::pair<Index, double>> values;
};

struct Scenario {
  std::string name;
  /// True plant; the controller receives its own copy through `controller.plant`.
  DiscreteLTI<double> plant;
  DisturbanceChannel<double> disturbance;
  VectorXd x0;
  Index steps = 0;
  std::vector<ScheduleEdit> schedule;
  MPCConfig controller;
  std::uint64_t seed = 0;
  /// Uniform measurement noise amplitude on x and y; 0 disables it.
  double noise = 0.0;

  /// Throws std::invalid_argument.
  void validate() const;
};

struct StepRecord {
  Index t = 0;
  VectorXd x, u, y;
  /// Simulator-side disturbance state, never shown to the controller.
  VectorXd w;
  double ex_norm = 0, eu_norm = 0;
  double cost = 0;
  double stage_cost = 0;
  bool feasible = false;
  double slack = 0;
  VectorXd theta_y;
  double solve_ms = 0;
  double kkt = 0;
  bool trusted = false;
  QPStatus status = QPStatus::max_iter;
};

struct SimLog {
  std::vector<StepRecord> records;
  std::string scenario_hash;
  bool noisy = false;
};

/// Called after every controller step, before the plant advances.
using StepHook = std::function<void(Index t, const Controller&, const StepResult&)>;

SimLog run(const Scenario& sc, const StepHook& hook = {});

/// Optimal reachable references per schedule segment, from the regulation oracle.
class ReferenceOracle {
 public:
  explicit ReferenceOracle(const Scenario& sc);

  /// y*(t); throws std::runtime_error if the segment admits no reference.
  VectorXd y_star(Index t) const;
  /// theta_y* advanced to time t, comparable with the controller's theta_y(t).
  VectorXd theta_y(Index t) const;
  const OptimalReference& segment(Index t) const;

 private:
  std::vector<Index> starts_;
  std::vector<std::optional<OptimalReference>> refs_;
};

/// w(t) as the simulator produces it, schedule edits included.
std::vector<VectorXd> disturbance_trajectory(const Scenario& sc);

struct Metrics {
  /// First t after the last schedule change from which ||y - y*||_inf <= tol holds to the end.
  std::optional<Index> settling_time;
  double max_violation = 0;
  Index infeasible_steps = 0;
  double mean_solve_ms = 0, max_solve_ms = 0;
  double final_ex_norm = 0, final_eu_norm = 0;
  double final_tracking_error = 0;
  double max_kkt = 0;
};

Metrics metrics(const SimLog& log, const Scenario& sc, const std::function<VectorXd(Index)>& y_star, double tol);

/// Last schedule change (0 when there is none).
Index last_change(const Scenario& sc);

/// Times of every segment start, 0 included.
std::vector<Index> segment_starts(const Scenario& sc);

// Quadruple-tank presets: Ts = 1 s, N = 40, Q = R = I/2, Qy = 5 I, Pa = 5 I, sigma = 0.05.
//
// w = (1, r2, r4[, a, b]): the first entry carries the linearization drift,
// r2/r4 the constant levels of the tank 2/4 references, (a, b) the rotating
// pair of a 10 sample sinusoid entering both references with `amplitude`.

struct FourTankSetpoint {
  Index time = 0;
  double h2 = 16, h4 = 16;
};

struct FourTankOptions {
  std::vector<FourTankSetpoint> setpoints{{0, 16, 16}};
  bool sinusoid = true;
  double amplitude = 0.2;
  Index steps = 400;
  Index N = 40;
  int facets = 40;
  MPCVariant variant = MPCVariant::artificial_reference;
};

Scenario four_tank_scenario(const FourTankOptions& opt);

/// Two reachable setpoints with a sinusoid on top, 400 steps.
Scenario four_tank_sine();
/// h2 = 21, h4 = 4 lies outside the steady states the inputs can hold.
Scenario four_tank_unreachable();
/// Constant references only: Z_{F,sigma} stays linear.
Scenario four_tank_constant();

}  // namespace immpc
