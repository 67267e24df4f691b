#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace immpc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

/**
 * min  1/2 x' H x + f' x
 * s.t. Aeq x = beq,  Aineq x <= bineq
 */
struct QPProblem {
  MatrixXd H;
  VectorXd f;
  MatrixXd Aeq;
  VectorXd beq;
  MatrixXd Aineq;
  VectorXd bineq;
  /// Optional per-variable labels, used by the text dump.
  std::vector<std::string> names;

  Index dim() const { return H.rows(); }
  Index equalities() const { return Aeq.rows(); }
  Index inequalities() const { return Aineq.rows(); }

  /// Throws std::invalid_argument on inconsistent dimensions; symmetrizes H.
  void validate();
  double objective(const VectorXd& x) const;
};

enum class QPStatus { optimal, infeasible, max_iter };

const char* to_string(QPStatus s);

/// Residuals with every constraint row scaled to unit norm; stationarity, complementarity and the
/// multiplier sign are relative to max(1, largest gradient term).
struct KKTResiduals {
  double stationarity = 0;
  double primal_eq = 0;
  double primal_ineq = 0;
  double complementarity = 0;
  /// Largest negative inequality multiplier (sign condition).
  double dual_sign = 0;

  double max() const;
};

struct QPSolution {
  VectorXd x;
  double objective = 0;
  QPStatus status = QPStatus::max_iter;
  KKTResiduals kkt;
  VectorXd lambda_ineq;
  VectorXd nu_eq;
  int iterations = 0;
  /// For status infeasible: multipliers (y_eq, y_ineq >= 0) with Aeq'y_eq + Aineq'y_ineq ~ 0
  /// and beq'y_eq + bineq'y_ineq < 0.
  VectorXd certificate_eq;
  VectorXd certificate_ineq;

  bool optimal() const { return status == QPStatus::optimal; }
};

/// Independent KKT check from raw problem data.
KKTResiduals kkt_residuals(const QPProblem& qp, const VectorXd& x, const VectorXd& nu_eq, const VectorXd& lambda_ineq);

/// ||Aeq'y_eq + Aineq'y_ineq|| and the (negative) combined right-hand side of a Farkas certificate.
std::pair<double, double> farkas_residual(const QPProblem& qp, const VectorXd& y_eq, const VectorXd& y_ineq);

struct QPSettings {
  int max_iter = 100;
  double tolerance = 1e-10;
  /// Rank threshold on |R_ii| / |R_00| when eliminating redundant equality rows.
  double rank_tolerance = 1e-10;
  bool polish = true;
};

/**
 * Dense convex QP solver.
 *
 * Equality rows are eliminated through a column-pivoted QR of Aeq' (redundant
 * rows dropped), the remaining inequality-constrained problem is solved by a
 * Mehrotra predictor-corrector interior point method and the result polished
 * on its active set. The null-space factorization is cached and reused while
 * H, Aeq and Aineq stay bitwise identical, which is the common case in
 * receding-horizon use where only right-hand sides move.
 */
class QPSolver {
 public:
  explicit QPSolver(QPSettings settings = {});
  ~QPSolver();
  QPSolver(QPSolver&&) noexcept;
  QPSolver& operator=(QPSolver&&) noexcept;

  QPSolution solve(const QPProblem& qp, const VectorXd* warm_start = nullptr);

  const QPSettings& settings() const { return settings_; }

 private:
  struct Structure;
  std::shared_ptr<const Structure> structure_for(const QPProblem& qp);

  QPSettings settings_;
  std::vector<std::shared_ptr<const Structure>> cache_;
};

QPSolution solve_qp(const QPProblem& qp, const QPSettings& settings = {});

/// One row of a sum-of-norms constraint z0 + sum_j ||(a_j, b_j)|| <= bound.
struct SocRowGroup {
  RowVectorXd constant;
  std::vector<std::pair<RowVectorXd, RowVectorXd>> pairs;
};

struct LinearInequalities {
  MatrixXd A;
  VectorXd b;
};

Index soc_aux_count(std::span<const SocRowGroup> groups);

/**
 * Inner polyhedral approximation of sum-of-norms rows.
 *
 * Every norm gets an auxiliary t_ij >= cos(phi_k) a + sin(phi_k) b for
 * phi_k = 2 pi k / K, and the budget becomes
 *   sum_j t_ij <= cos(pi/K) (bound_i - z0_i),
 * so every point satisfying the linear rows satisfies the true row. Rows
 * are expressed over [v, t] with t appended after the base variables.
 * Groups without pairs produce a single plain linear row.
 */
LinearInequalities soc_rows(std::span<const SocRowGroup> groups, const VectorXd& bounds, int facets);

/// Smallest feasible auxiliaries t_ij = max_k facet_k(v).
VectorXd soc_aux_values(std::span<const SocRowGroup> groups, const VectorXd& v, int facets);

/// Whether some t makes (v, t) satisfy soc_rows, with slack `tol`.
bool soc_feasible(std::span<const SocRowGroup> groups, const VectorXd& bounds, const VectorXd& v, int facets,
                  double tol = 0.0);

/**
 * Plain-text dump, row-major:
 *
 *   # immpc-qp 1
 *   dims <d> <e> <i>
 *   names <d labels, or "-">
 *   H      (d lines of d numbers)
 *   f      (1 line of d numbers)
 *   Aeq    (e lines), beq (1 line)
 *   Aineq  (i lines), bineq (1 line)
 *
 * Each block is preceded by a line carrying its name; numbers use 17
 * significant digits.
 */
void write_qp(std::ostream& os, const QPProblem& qp);
QPProblem read_qp(std::istream& is);

}  // namespace immpc
