#include <doctest.h>

#include "immpc/oracle.hpp"
#include "immpc/qp.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace immpc;

namespace {

MatrixXd gaussian(std::mt19937& rng, Index r, Index c) {
  std::normal_distribution<double> n;
  MatrixXd M(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) M(i, j) = n(rng);
  return M;
}

QPProblem random_strictly_convex(std::mt19937& rng, Index d, Index e, Index m) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  QPProblem qp;
  const MatrixXd L = gaussian(rng, d, d);
  qp.H = L * L.transpose() + 0.1 * MatrixXd::Identity(d, d);
  qp.f = gaussian(rng, d, 1);
  const VectorXd x0 = gaussian(rng, d, 1);
  qp.Aeq = gaussian(rng, e, d);
  qp.beq = qp.Aeq * x0;
  qp.Aineq = gaussian(rng, m, d);
  qp.bineq = qp.Aineq * x0;
  for (Index i = 0; i < m; ++i) qp.bineq(i) += u(rng);
  return qp;
}

}  // namespace

TEST_CASE("projection onto a half-plane") {
  QPProblem qp;
  qp.H = MatrixXd::Identity(2, 2);
  qp.f = VectorXd::Zero(2);
  qp.Aeq.resize(0, 2);
  qp.beq.resize(0);
  qp.Aineq = (MatrixXd(1, 2) << -1, -1).finished();
  qp.bineq = (VectorXd(1) << -1).finished();
  const auto sol = solve_qp(qp);
  REQUIRE(sol.optimal());
  CHECK(sol.x(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(sol.x(1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(sol.objective == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(sol.lambda_ineq(0) == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(sol.kkt.max() < 1e-10);
}

TEST_CASE("redundant equality rows are eliminated") {
  QPProblem qp;
  qp.H = MatrixXd::Identity(3, 3);
  qp.f = VectorXd::Zero(3);
  qp.Aeq = (MatrixXd(3, 3) << 1, 1, 0,
                              2, 2, 0,
                              0, 0, 1).finished();
  qp.beq = (VectorXd(3) << 2, 4, 1).finished();
  const auto sol = solve_qp(qp);
  REQUIRE(sol.optimal());
  CHECK((sol.x - Eigen::Vector3d(1, 1, 1)).norm() < 1e-12);
  CHECK(sol.kkt.max() < 1e-10);
}

TEST_CASE("inconsistent equalities yield a certificate") {
  QPProblem qp;
  qp.H = MatrixXd::Identity(2, 2);
  qp.f = VectorXd::Zero(2);
  qp.Aeq = (MatrixXd(2, 2) << 1, 1, 2, 2).finished();
  qp.beq = (VectorXd(2) << 1, 3).finished();
  const auto sol = solve_qp(qp);
  REQUIRE(sol.status == QPStatus::infeasible);
  const auto [comb, rhs] = farkas_residual(qp, sol.certificate_eq, VectorXd::Zero(0));
  CHECK(comb < 1e-12);
  CHECK(rhs < -1e-3);
}

TEST_CASE("contradictory bounds yield a Farkas certificate") {
  QPProblem qp;
  qp.H = MatrixXd::Identity(2, 2);
  qp.f = VectorXd::Zero(2);
  qp.Aeq = (MatrixXd(1, 2) << 1, -1).finished();
  qp.beq = (VectorXd(1) << 0).finished();
  // x1 <= 0 and x2 >= 1 while x1 = x2
  qp.Aineq = (MatrixXd(2, 2) << 1, 0, 0, -1).finished();
  qp.bineq = (VectorXd(2) << 0, -1).finished();
  const auto sol = solve_qp(qp);
  REQUIRE(sol.status == QPStatus::infeasible);
  CHECK(sol.certificate_ineq.minCoeff() >= -1e-12);
  const auto [comb, rhs] = farkas_residual(qp, sol.certificate_eq, sol.certificate_ineq);
  CHECK(comb < 1e-6);
  CHECK(rhs < -1e-3);
}

TEST_CASE("indefinite Hessian is rejected") {
  QPProblem qp;
  qp.H = (MatrixXd(2, 2) << 1, 0, 0, -1).finished();
  qp.f = VectorXd::Zero(2);
  CHECK_THROWS_AS(solve_qp(qp), std::invalid_argument);
}

TEST_CASE("semidefinite Hessian with a bounded linear direction") {
  // min x1^2/2 - x2  s.t. x2 <= 3, x1 + x2 = 4
  QPProblem qp;
  qp.H = (MatrixXd(2, 2) << 1, 0, 0, 0).finished();
  qp.f = (VectorXd(2) << 0, -1).finished();
  qp.Aeq = (MatrixXd(1, 2) << 1, 1).finished();
  qp.beq = (VectorXd(1) << 4).finished();
  qp.Aineq = (MatrixXd(1, 2) << 0, 1).finished();
  qp.bineq = (VectorXd(1) << 3).finished();
  const auto sol = solve_qp(qp);
  REQUIRE(sol.optimal());
  CHECK(sol.x(0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sol.x(1) == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(sol.kkt.max() < 1e-9);
}

TEST_CASE("random strictly convex QPs agree with the dual gradient oracle") {
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> dim(2, 20);
  QPSolver solver;
  for (int trial = 0; trial < 40; ++trial) {
    const Index d = dim(rng);
    const Index e = std::uniform_int_distribution<int>(0, int(d) / 2)(rng);
    const Index m = std::uniform_int_distribution<int>(0, 40)(rng);
    const QPProblem qp = random_strictly_convex(rng, d, e, m);
    CAPTURE(trial);
    const auto sol = solver.solve(qp);
    REQUIRE(sol.optimal());
    CHECK(sol.kkt.max() < 1e-7);
    const auto ref = dual_gradient_qp(qp);
    CHECK(ref.primal_infeasibility < 1e-8);
    CHECK(std::abs(sol.objective - ref.dual_objective) <= 1e-6 * (1 + std::abs(ref.dual_objective)));
  }
}

TEST_CASE("cached structure gives the same answer as a fresh solve") {
  std::mt19937 rng(11);
  QPProblem qp = random_strictly_convex(rng, 12, 3, 25);
  QPSolver cached;
  (void)cached.solve(qp);
  for (int k = 0; k < 5; ++k) {
    qp.f = gaussian(rng, 12, 1);
    qp.bineq.array() += 0.1;
    const auto a = cached.solve(qp);
    const auto b = solve_qp(qp);
    REQUIRE(a.optimal());
    CHECK((a.x - b.x).cwiseAbs().maxCoeff() < 1e-12);
    const VectorXd warm = a.x;
    const auto c = cached.solve(qp, &warm);
    CHECK((c.x - a.x).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("text dump round trip") {
  std::mt19937 rng(3);
  QPProblem qp = random_strictly_convex(rng, 4, 1, 3);
  qp.names = {"a", "b", "c", "d"};
  std::stringstream ss;
  write_qp(ss, qp);
  CHECK(ss.str().rfind("# immpc-qp", 0) == 0);
  const QPProblem back = read_qp(ss);
  CHECK(back.H == qp.H);
  CHECK(back.f == qp.f);
  CHECK(back.Aeq == qp.Aeq);
  CHECK(back.bineq == qp.bineq);
  CHECK(back.names == qp.names);
}

TEST_CASE("polygonal norm rows are an inner approximation") {
  // z0 + ||(a, b)|| <= 1 in three variables (z0, a, b).
  const int K = 12;
  SocRowGroup g;
  g.constant = RowVectorXd::Unit(3, 0);
  g.pairs.emplace_back(RowVectorXd::Unit(3, 1), RowVectorXd::Unit(3, 2));
  const std::vector<SocRowGroup> groups{g};
  const VectorXd bound = VectorXd::Ones(1);
  const auto rows = soc_rows(groups, bound, K);
  CHECK(rows.A.rows() == 1 + K);
  CHECK(rows.A.cols() == 4);

  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  int feasible = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const VectorXd v = (VectorXd(3) << u(rng), u(rng), u(rng)).finished();
    const double true_lhs = v(0) + std::hypot(v(1), v(2));
    const double cK = std::cos(std::numbers::pi / K);
    const bool approx_ok = soc_feasible(groups, bound, v, K);
    if (approx_ok) {
      ++feasible;
      CHECK(true_lhs <= 1.0 + 1e-12);
    }
    // Points inside the shrunken disc are always accepted.
    if (cK * v(0) + std::hypot(v(1), v(2)) <= cK * 1.0 - 1e-12) CHECK(approx_ok);
  }
  CHECK(feasible > 0);
}

TEST_CASE("plain rows pass through the norm approximation unchanged") {
  SocRowGroup g;
  g.constant = (RowVectorXd(2) << 2, -1).finished();
  const std::vector<SocRowGroup> groups{g};
  const auto rows = soc_rows(groups, (VectorXd(1) << 3).finished(), 16);
  REQUIRE(rows.A.rows() == 1);
  CHECK(rows.A.row(0) == g.constant);
  CHECK(rows.b(0) == 3);
}

TEST_CASE("dual gradient oracle without constraints") {
  QPProblem qp;
  qp.H = 2 * MatrixXd::Identity(2, 2);
  qp.f = (VectorXd(2) << 2, -4).finished();
  const auto r = dual_gradient_qp(qp);
  CHECK((r.x - (VectorXd(2) << -1, 2).finished()).norm() < 1e-14);
  CHECK(r.dual_objective == doctest::Approx(-5.0));
}
