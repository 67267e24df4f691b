#pragma once

#include "immpc/lyapunov.hpp"
#include "immpc/qp.hpp"
#include "immpc/regulation.hpp"

#include <optional>
#include <vector>

namespace immpc {

enum class MPCVariant { basic, artificial_reference };
enum class FallbackPolicy {
  /// Re-solve with state rows softened by one shared slack; input rows stay hard.
  soften_state,
  /// Report infeasibility and hold the previous input.
  hold,
};

struct MPCConfig {
  DiscreteLTI<double> plant;
  ConstraintPolytope<double> constraints;
  Index N = 10;
  MatrixXd Q, R, Qy;
  MatrixXd Pa;
  VectorXd sigma;
  SignalGenerator<double> gen;
  SignalGenerator<double> gen_a;
  MatrixFractionFilter<double> Gx, Gu;
  TerminalCost<double> terminal;
  int soc_facets = 32;
  MPCVariant variant = MPCVariant::artificial_reference;
  FallbackPolicy fallback = FallbackPolicy::soften_state;
  /// Constraint-side lowpass x_f(t+1) = (1 - a) x_f(t) + a x(t); 0 disables it.
  double lowpass_alpha = 0.0;
  QPSettings qp;

  Index n() const { return plant.n(); }
  Index m() const { return plant.m(); }
  Index p() const { return plant.p(); }
  Index nn() const { return Gx.denominator_degree(); }
  Index ndx() const { return Gx.numerator_degree(); }
  Index ndu() const { return Gu.numerator_degree(); }

  /// n + m (n_n + n_du) + n n_dx; convergence needs N above it.
  Index horizon_bound() const { return n() + m() * (nn() + ndu()) + n() * ndx(); }
  bool horizon_ok() const { return N > horizon_bound(); }

  /// Throws std::invalid_argument on inconsistent dimensions or weights.
  void validate() const;
};

/**
 * Quadratic weights, the filter pair with Q(z) = I and p = char_poly(gen), and
 * the terminal cost derived from them. Pa = pa_weight * I.
 */
MPCConfig make_config(const DiscreteLTI<double>& plant, const ConstraintPolytope<double>& constraints, Index N,
                      const MatrixXd& Q, const MatrixXd& R, const MatrixXd& Qy, double pa_weight, double sigma,
                      const SignalGenerator<double>& gen, Index reference_frequencies);

/// Measured data the prediction is pinned to, most recent first.
struct PredictionHistory {
  std::vector<VectorXd> x;   // x(t), ..., x(t - nn + 1)
  std::vector<VectorXd> y;   // y(t), ..., y(t - nn + 1)
  std::vector<VectorXd> u;   // u(t - 1), ..., u(t - nn)
  std::vector<VectorXd> ex;  // e~x(t), ..., e~x(t - ndx)
  std::vector<VectorXd> eu;  // e~u(t - 1), ..., e~u(t - ndu)
  VectorXd x_filtered;       // lowpass state, used only when enabled

  static PredictionHistory zeros(const MPCConfig& cfg);
  /// Concatenation in the member order above (x_filtered excluded).
  VectorXd stacked() const;
  static PredictionHistory unstack(const MPCConfig& cfg, const VectorXd& h);
};

/// Column offsets of the free decision variables.
struct VariableLayout {
  Index n = 0, m = 0, p = 0, N = 0;
  // e~x_k, x_k, y_k for k in [1, N]; e~u_k, u_k for k in [0, N]
  Index ex = 0, eu = 0, x = 0, u = 0, y = 0;
  Index theta_x = 0, theta_u = 0, theta_y = 0;
  Index aux = 0, aux_count = 0;
  Index slack = -1;
  Index size = 0;

  Index ex_col(Index k) const { return ex + (k - 1) * n; }
  Index eu_col(Index k) const { return eu + k * m; }
  Index x_col(Index k) const { return x + (k - 1) * n; }
  Index u_col(Index k) const { return u + k * m; }
  Index y_col(Index k) const { return y + (k - 1) * p; }
  Index theta_size() const { return aux - theta_x; }
  Index trajectory_size() const { return theta_x; }
};

struct MPCProblem {
  QPProblem qp;
  VariableLayout layout;
  /// Cost of the pinned terms; J = qp.objective(v) + constant.
  double constant = 0.0;
  /// Inequality rows on predicted or reference states (softened by the fallback).
  std::vector<bool> state_row;
  /// Index of the first Z_{F,sigma} row; rows before it are trajectory constraints.
  Index reference_rows_begin = 0;
};

MPCProblem build_basic_qp(const MPCConfig& cfg, const PredictionHistory& h);
MPCProblem build_artref_qp(const MPCConfig& cfg, const PredictionHistory& h);
MPCProblem build_qp(const MPCConfig& cfg, const PredictionHistory& h);

/// Adds one nonnegative slack shared by every state row, penalized at 1e6 ||Qy||_max s^2.
MPCProblem soften_state_rows(const MPCProblem& problem, const MPCConfig& cfg);

double objective_value(const MPCProblem& problem, const VectorXd& v);

/// max |Aeq v - beq| and max (Aineq v - bineq)_+.
std::pair<double, double> constraint_residuals(const QPProblem& qp, const VectorXd& v);

/// Decoded optimizer.
struct Plan {
  std::vector<VectorXd> ex, eu, x, u, y;  // index k in [0, N]
  ArtificialReferenceParam theta;
};

Plan decode(const MPCConfig& cfg, const MPCProblem& problem, const PredictionHistory& h, const VectorXd& v);

/// ||e~x||^2_Q + ||e~u||^2_R + ||y - y_a||^2_Qy.
double stage_cost(const MPCConfig& cfg, const VectorXd& ex, const VectorXd& eu, const VectorXd& y,
                  const VectorXd& ya);

/**
 * Feasible guess for the next step from the current optimizer: every
 * trajectory shifted by one sample, the filter recursions continued for the
 * new last sample and the reference parameters rotated by S (S_a).
 */
VectorXd shifted_candidate(const MPCConfig& cfg, const VariableLayout& layout, const VectorXd& prev);

/**
 * Forward evaluation of the disturbance-free prediction recursions: given the
 * history and e~u_0..e~u_{H-1}, returns e~x, x, y for k in [0, H] and u for k in [0, H-1].
 */
struct PredictedTrajectory {
  std::vector<VectorXd> ex, x, y, u;
};
PredictedTrajectory predict(const MPCConfig& cfg, const PredictionHistory& h, const std::vector<VectorXd>& eu_future);

struct StepResult {
  VectorXd u;
  double objective = 0.0;
  bool feasible = false;
  double slack = 0.0;
  QPStatus status = QPStatus::max_iter;
  ArtificialReferenceParam theta;
  double solve_ms = 0.0;
  /// Stage cost of the applied first step.
  double stage_cost = 0.0;
  double kkt = 0.0;
  VectorXd ex;  // e~x(t)
  VectorXd eu;  // e~u(t)
  bool trusted = false;
};

/// Online state of one closed loop.
class Controller {
 public:
  explicit Controller(MPCConfig cfg);

  const MPCConfig& config() const { return cfg_; }

  StepResult step(const VectorXd& x_meas, const VectorXd& y_meas);

  /// The scenario reports a change not generated by S; restarts the trust counter.
  void signal_model_break() { since_break_ = 0; }
  /// At least nn + 1 samples since start or the last model break.
  bool trusted() const { return since_break_ >= cfg_.nn() + 1; }

  const std::optional<MPCProblem>& last_problem() const { return last_problem_; }
  const VectorXd& last_solution() const { return last_solution_; }
  const PredictionHistory& last_history() const { return last_history_; }

 private:
  void advance_measurement(const VectorXd& x_meas, const VectorXd& y_meas);
  PredictionHistory history() const;

  MPCConfig cfg_;
  QPSolver solver_;
  FilterState<double> x_filter_;
  FilterState<double> u_filter_;
  History<double> y_hist_;
  History<double> ex_hist_;
  VectorXd x_filtered_;
  VectorXd u_prev_;
  VectorXd candidate_;
  std::optional<MPCProblem> last_problem_;
  VectorXd last_solution_;
  PredictionHistory last_history_;
  bool started_ = false;
  Index since_break_ = 0;
};

/// Linear map h -> u0* of the problem without inequality rows, h = PredictionHistory::stacked().
struct LinearGain {
  MatrixXd K;
  VectorXd offset;
};
LinearGain unconstrained_gain(const MPCConfig& cfg);

}  // namespace immpc
