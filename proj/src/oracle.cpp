#include "immpc/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace immpc {

DualGradientResult dual_gradient_qp(const QPProblem& qp, int max_iter, double tol) {
  const Index d = qp.dim();
  const Index e = qp.equalities();
  const Index m = qp.inequalities();
  MatrixXd A(e + m, d);
  VectorXd b(e + m);
  if (e) {
    A.topRows(e) = qp.Aeq;
    b.head(e) = qp.beq;
  }
  if (m) {
    A.bottomRows(m) = qp.Aineq;
    b.tail(m) = qp.bineq;
  }

  Eigen::LLT<MatrixXd> llt(qp.H);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("dual_gradient_qp: H must be positive definite");
  const MatrixXd HinvAt = llt.solve(A.transpose());
  const VectorXd Hinvf = llt.solve(qp.f);
  DualGradientResult out;
  if (e + m == 0) {
    out.x = -Hinvf;
    out.dual_objective = 0.5 * out.x.dot(qp.f);
    return out;
  }
  const MatrixXd D = A * HinvAt;  // dual Hessian (negated)
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(D, Eigen::EigenvaluesOnly);
  const double L = std::max(es.eigenvalues().maxCoeff(), 1e-12);

  auto primal = [&](const VectorXd& y) -> VectorXd { return -Hinvf - HinvAt * y; };
  auto project = [&](VectorXd& y) { y.tail(m) = y.tail(m).cwiseMax(0.0); };

  VectorXd y = VectorXd::Zero(e + m), y_prev = y, v = y;
  double t = 1;
  for (int it = 0; it < max_iter; ++it) {
    out.iterations = it + 1;
    // grad of dual wrt y at v: A x(v) - b
    const VectorXd g = A * primal(v) - b;
    VectorXd y_next = v + g / L;
    project(y_next);
    // Gradient-based restart.
    if ((v - y_next).dot(y_next - y) > 0) {
      t = 1;
      v = y;
      continue;
    }
    const double t_next = 0.5 * (1 + std::sqrt(1 + 4 * t * t));
    v = y_next + ((t - 1) / t_next) * (y_next - y);
    y_prev = y;
    y = y_next;
    t = t_next;
    if (it % 50 == 0) {
      const VectorXd x = primal(y);
      const VectorXd r = A * x - b;
      double infeas = e ? r.head(e).cwiseAbs().maxCoeff() : 0.0;
      if (m) infeas = std::max(infeas, r.tail(m).maxCoeff());
      const double step = (y - y_prev).cwiseAbs().maxCoeff();
      if (infeas <= tol && step <= tol) break;
    }
  }
  out.x = primal(y);
  // Lagrangian at its minimizer x(y): the dual value.
  out.dual_objective = 0.5 * out.x.dot(qp.H * out.x) + qp.f.dot(out.x) + y.dot(A * out.x - b);
  const VectorXd r = A * out.x - b;
  out.primal_infeasibility = e ? r.head(e).cwiseAbs().maxCoeff() : 0.0;
  if (m) out.primal_infeasibility = std::max(out.primal_infeasibility, r.tail(m).maxCoeff());
  return out;
}

}  // namespace immpc
