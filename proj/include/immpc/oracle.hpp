#pragma once

#include "immpc/qp.hpp"

namespace immpc {

/// Reference QP solution obtained by accelerated projected gradient on the dual.
struct DualGradientResult {
  VectorXd x;
  double dual_objective = 0;  // lower bound on the optimum
  double primal_infeasibility = 0;
  int iterations = 0;
};

/**
 * Strictly convex QPs only (H positive definite). The dual
 *   max_{lambda >= 0, nu} -1/2 (f + A'y)' H^{-1} (f + A'y) - b'y
 * is maximized with FISTA and gradient-based restarts. Slow but
 * structurally unrelated to the interior point solver.
 */
DualGradientResult dual_gradient_qp(const QPProblem& qp, int max_iter = 400000, double tol = 1e-11);

}  // namespace immpc
