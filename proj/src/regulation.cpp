#include "immpc/regulation.hpp"

#include <cmath>
#include <stdexcept>

namespace immpc {

RegulationSolution solve_regulation(const DiscreteLTI<double>& plant, const MatrixXd& E, const MatrixXd& F,
                                    const MatrixXd& S) {
  plant.validate();
  const Index n = plant.n(), m = plant.m(), p = plant.p(), q = S.rows();
  if (S.cols() != q || E.rows() != n || E.cols() != q || F.rows() != p || F.cols() != q)
    throw std::invalid_argument("solve_regulation: dimension mismatch");

  // [S' (x) I - I (x) A, -(I (x) B); I (x) C, 0] [vec Pi1; vec Pi2] = [vec E; -vec F]
  const Index rows = n * q + p * q, cols = n * q + m * q;
  MatrixXd K = MatrixXd::Zero(rows, cols);
  for (Index a = 0; a < q; ++a)
    for (Index b = 0; b < q; ++b) {
      K.block(a * n, b * n, n, n) += S(b, a) * MatrixXd::Identity(n, n);
      if (a == b) {
        K.block(a * n, b * n, n, n) -= plant.A;
        K.block(a * n, n * q + b * m, n, m) = -plant.B;
        K.block(n * q + a * p, b * n, p, n) = plant.C;
      }
    }
  VectorXd rhs(rows);
  rhs.head(n * q) = Eigen::Map<const VectorXd>(E.data(), n * q);
  rhs.tail(p * q) = -Eigen::Map<const VectorXd>(F.data(), p * q);

  Eigen::JacobiSVD<MatrixXd> svd(K, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& sv = svd.singularValues();
  if (rows < cols || sv.size() == 0 || sv(sv.size() - 1) <= 0 || sv(0) / sv(sv.size() - 1) > 1e12)
    throw std::runtime_error("regulation problem not well-defined");
  const VectorXd sol = svd.solve(rhs);

  RegulationSolution r;
  r.Pi1 = Eigen::Map<const MatrixXd>(sol.data(), n, q);
  r.Pi2 = Eigen::Map<const MatrixXd>(sol.data() + n * q, m, q);
  r.residual_dynamics = (r.Pi1 * S - plant.A * r.Pi1 - E - plant.B * r.Pi2).cwiseAbs().maxCoeff();
  r.residual_output = (plant.C * r.Pi1 + F).cwiseAbs().maxCoeff();
  const double scale = 1.0 + std::max(E.cwiseAbs().maxCoeff(), F.cwiseAbs().maxCoeff());
  if (r.residual_dynamics > 1e-8 * scale || r.residual_output > 1e-8 * scale)
    throw std::runtime_error("regulation problem not well-defined");
  return r;
}

VectorXd reference_at(const SignalGenerator<double>& gen, const VectorXd& theta, Index k) {
  const Index d = gen.dimension();
  if (theta.size() % d != 0) throw std::invalid_argument("reference_at: parameter length is not a multiple of dim(S)");
  const VectorXd c = gen.basis(k);
  VectorXd out(theta.size() / d);
  for (Index s = 0; s < out.size(); ++s) out(s) = c.dot(theta.segment(s * d, d));
  return out;
}

std::vector<SocRowGroup> reference_row_groups(const SignalGenerator<double>& gen, const ConstraintPolytope<double>& poly,
                                              Index width, Index x_offset, Index u_offset) {
  const Index d = gen.dimension();
  const Index n = poly.Cbar.cols(), m = poly.Dbar.cols();
  if (x_offset + n * d > width || u_offset + m * d > width)
    throw std::invalid_argument("reference_row_groups: parameter blocks exceed the row width");
  std::vector<SocRowGroup> groups;
  groups.reserve(static_cast<std::size_t>(poly.rows()));
  for (Index i = 0; i < poly.rows(); ++i) {
    SocRowGroup g;
    g.constant = RowVectorXd::Zero(width);
    if (gen.has_constant()) {
      for (Index s = 0; s < n; ++s) g.constant(x_offset + s * d) = poly.Cbar(i, s);
      for (Index s = 0; s < m; ++s) g.constant(u_offset + s * d) = poly.Dbar(i, s);
    }
    for (Index j = 0; j < gen.pairs(); ++j) {
      const Index off = gen.pair_offset(j);
      RowVectorXd a = RowVectorXd::Zero(width), b = RowVectorXd::Zero(width);
      for (Index s = 0; s < n; ++s) {
        a(x_offset + s * d + off) = poly.Cbar(i, s);
        b(x_offset + s * d + off + 1) = poly.Cbar(i, s);
      }
      for (Index s = 0; s < m; ++s) {
        a(u_offset + s * d + off) = poly.Dbar(i, s);
        b(u_offset + s * d + off + 1) = poly.Dbar(i, s);
      }
      if (a.isZero(0.0) && b.isZero(0.0)) continue;
      g.pairs.emplace_back(std::move(a), std::move(b));
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

AdmissibleResult admissible_check(const ArtificialReferenceParam& ref, const SignalGenerator<double>& gen,
                                  const ConstraintPolytope<double>& poly, const VectorXd& sigma) {
  const Index d = gen.dimension();
  const Index n = poly.Cbar.cols(), m = poly.Dbar.cols();
  if (ref.theta_x.size() != n * d || ref.theta_u.size() != m * d || sigma.size() != poly.rows())
    throw std::invalid_argument("admissible_check: dimension mismatch");
  if ((sigma.array() <= 0).any()) throw std::invalid_argument("admissible_check: sigma must be positive");

  AdmissibleResult r;
  r.margin.resize(poly.rows());
  // Per-coefficient images z = Cbar theta_x(.,c) + Dbar theta_u(.,c)
  MatrixXd Tx(n, d), Tu(m, d);
  for (Index s = 0; s < n; ++s) Tx.row(s) = ref.theta_x.segment(s * d, d).transpose();
  for (Index s = 0; s < m; ++s) Tu.row(s) = ref.theta_u.segment(s * d, d).transpose();
  const MatrixXd Z = poly.Cbar * Tx + poly.Dbar * Tu;  // n_c x d
  for (Index i = 0; i < poly.rows(); ++i) {
    double lhs = gen.has_constant() ? Z(i, 0) : 0.0;
    for (Index j = 0; j < gen.pairs(); ++j) {
      const Index off = gen.pair_offset(j);
      lhs += std::hypot(Z(i, off), Z(i, off + 1));
    }
    r.margin(i) = poly.cbar(i) - sigma(i) - lhs;
    // Rounding in the norm evaluation must not reject a reference sitting exactly on the boundary.
    if (r.margin(i) < -1e-12 * (1 + std::abs(poly.cbar(i)))) r.admissible = false;
  }
  return r;
}

MatrixXd fit_to_generator(const SignalGenerator<double>& gen, const MatrixXd& M, const MatrixXd& S, const VectorXd& w) {
  const Index d = gen.dimension();
  if (S.rows() != S.cols() || S.cols() != w.size() || M.cols() != w.size())
    throw std::invalid_argument("fit_to_generator: dimension mismatch");
  MatrixXd basis(d, d), values(M.rows(), d);
  VectorXd wk = w;
  for (Index k = 0; k < d; ++k) {
    basis.row(k) = gen.basis(k).transpose();
    values.col(k) = M * wk;
    wk = S * wk;
  }
  // Gamma basis' = values
  const MatrixXd Gamma = basis.fullPivLu().solve(values.transpose()).transpose();
  wk = w;
  const double scale = 1.0 + (M.size() ? M.cwiseAbs().maxCoeff() : 0.0) * (w.size() ? w.cwiseAbs().maxCoeff() : 0.0);
  for (Index k = 0; k < 4 * d + 16; ++k) {
    const VectorXd err = Gamma * gen.basis(k) - M * wk;
    if (err.size() && err.cwiseAbs().maxCoeff() > 1e-8 * scale)
      throw std::runtime_error("disturbance contains modes outside the signal generator");
    wk = S * wk;
  }
  return Gamma;
}

OptimalReference optimal_reference(const DiscreteLTI<double>& plant, const DisturbanceSnapshot& dist,
                                   const SignalGenerator<double>& gen, const SignalGenerator<double>& gen_a,
                                   const MatrixXd& Pa, const ConstraintPolytope<double>& poly, const VectorXd& sigma,
                                   int facets) {
  plant.validate();
  poly.validate(plant.n(), plant.m());
  const Index n = plant.n(), m = plant.m(), p = plant.p();
  const Index d = gen.dimension(), da = gen_a.dimension();
  if (gen_a.pairs() > gen.pairs() || !(gen.leading(gen_a.pairs()) == gen_a))
    throw std::invalid_argument("optimal_reference: reference frequencies must lead the generator frequencies");
  if (Pa.rows() != p * da || Pa.cols() != p * da) throw std::invalid_argument("optimal_reference: Pa has wrong size");
  if (sigma.size() != poly.rows()) throw std::invalid_argument("optimal_reference: one sigma per constraint row");

  const MatrixXd GammaE = fit_to_generator(gen, dist.E, dist.S, dist.w);
  const MatrixXd GammaF = fit_to_generator(gen, dist.F, dist.S, dist.w);

  const Index nx = n * d, nu = m * d, ny = p * da;
  const Index base = nx + nu + ny;
  const auto groups = reference_row_groups(gen, poly, base, 0, nx);
  const Index nt = soc_aux_count(groups);
  const Index width = base + nt;
  auto X = [&](Index s, Index c) { return s * d + c; };
  auto U = [&](Index s, Index c) { return nx + s * d + c; };
  auto Y = [&](Index r, Index c) { return nx + nu + r * da + c; };

  QPProblem qp;
  qp.Aeq = MatrixXd::Zero(n * d + p * d, width);
  qp.beq = VectorXd::Zero(n * d + p * d);
  const MatrixXd& S = gen.S();
  Index row = 0;
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < d; ++c, ++row) {
      for (Index l = 0; l < d; ++l) qp.Aeq(row, X(i, l)) += S(c, l);
      for (Index j = 0; j < n; ++j) qp.Aeq(row, X(j, c)) -= plant.A(i, j);
      for (Index j = 0; j < m; ++j) qp.Aeq(row, U(j, c)) -= plant.B(i, j);
      qp.beq(row) = GammaE(i, c);
    }
  for (Index r = 0; r < p; ++r)
    for (Index c = 0; c < d; ++c, ++row) {
      for (Index j = 0; j < n; ++j) qp.Aeq(row, X(j, c)) = plant.C(r, j);
      if (c < da) qp.Aeq(row, Y(r, c)) = -1.0;
      qp.beq(row) = -GammaF(r, c);
    }
  const auto ineq = soc_rows(groups, poly.cbar - sigma, facets);
  qp.Aineq = ineq.A;
  qp.bineq = ineq.b;
  qp.H = MatrixXd::Zero(width, width);
  qp.H.block(nx + nu, nx + nu, ny, ny) = 2.0 * 0.5 * (Pa + Pa.transpose());
  qp.f = VectorXd::Zero(width);

  QPSolver solver;
  const QPSolution first = solver.solve(qp);
  if (first.status == QPStatus::infeasible)
    throw std::runtime_error("optimal_reference: no admissible reference (sigma too large or target unreachable)");
  if (!first.optimal()) throw std::runtime_error("optimal_reference: solver did not converge");

  // Secondary objective: minimum-norm (theta_x, theta_u) among the minimizers.
  QPProblem second = qp;
  second.H.setZero();
  second.H.topLeftCorner(nx + nu, nx + nu) = 2.0 * MatrixXd::Identity(nx + nu, nx + nu);
  const Index e0 = qp.Aeq.rows();
  second.Aeq.conservativeResize(e0 + ny, width);
  second.beq.conservativeResize(e0 + ny);
  second.Aeq.bottomRows(ny).setZero();
  for (Index k = 0; k < ny; ++k) {
    second.Aeq(e0 + k, nx + nu + k) = 1.0;
    second.beq(e0 + k) = first.x(nx + nu + k);
  }
  const QPSolution refined = solver.solve(second);
  const VectorXd& x = refined.optimal() ? refined.x : first.x;

  OptimalReference out{{x.head(nx), x.segment(nx, nu), x.segment(nx + nu, ny)}, 0.0, gen_a};
  out.objective = out.theta.theta_y.dot(Pa * out.theta.theta_y);
  return out;
}

PolytopeCheck check_polytope(const ConstraintPolytope<double>& poly) {
  const Index n = poly.Cbar.cols(), m = poly.Dbar.cols(), d = n + m;
  MatrixXd G(poly.rows(), d);
  G << poly.Cbar, poly.Dbar;
  PolytopeCheck out;
  out.lower = VectorXd::Constant(d, -std::numeric_limits<double>::infinity());
  out.upper = VectorXd::Constant(d, std::numeric_limits<double>::infinity());

  QPSolver solver;
  QPProblem feas{MatrixXd::Identity(d, d), VectorXd::Zero(d), MatrixXd(0, d), VectorXd(0), G, poly.cbar, {}};
  out.nonempty = solver.solve(feas).optimal();
  if (!out.nonempty) return out;

  // Bounded iff no recession direction: {dir | G dir <= 0, dir_j = +-1} is empty for every j.
  out.bounded = true;
  for (Index j = 0; j < d && out.bounded; ++j)
    for (double sgn : {1.0, -1.0}) {
      QPProblem rec{MatrixXd::Identity(d, d), VectorXd::Zero(d), RowVectorXd::Unit(d, j), VectorXd::Constant(1, sgn),
                    G, VectorXd::Zero(poly.rows()), {}};
      if (solver.solve(rec).status != QPStatus::infeasible) {
        out.bounded = false;
        break;
      }
    }
  if (!out.bounded) return out;

  for (Index j = 0; j < d; ++j)
    for (double sgn : {1.0, -1.0}) {
      QPProblem lp{MatrixXd::Zero(d, d), sgn * VectorXd::Unit(d, j), MatrixXd(0, d), VectorXd(0), G, poly.cbar, {}};
      const auto s = solver.solve(lp);
      if (!s.optimal()) continue;
      (sgn > 0 ? out.lower : out.upper)(j) = s.x(j);
    }
  return out;
}

}  // namespace immpc
