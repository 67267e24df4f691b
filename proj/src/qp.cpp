#include "immpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace immpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inf_norm(const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

VectorXd row_norms(const MatrixXd& A) {
  VectorXd n(A.rows());
  for (Index i = 0; i < A.rows(); ++i) n(i) = A.row(i).norm();
  return n;
}

VectorXd inverse_or_zero(const VectorXd& n) {
  VectorXd s(n.size());
  for (Index i = 0; i < n.size(); ++i) s(i) = n(i) > 0 ? 1.0 / n(i) : 0.0;
  return s;
}

/// Largest alpha in (0, 1] with v + alpha dv >= 0.
double max_step(const VectorXd& v, const VectorXd& dv) {
  double a = 1.0;
  for (Index i = 0; i < v.size(); ++i)
    if (dv(i) < 0) a = std::min(a, -v(i) / dv(i));
  return a;
}

// Result of the inequality-only reduced problem
//   min 1/2 z'Hz + f'z  s.t. Gz <= h.
struct IpmResult {
  VectorXd z;
  VectorXd lambda;
  VectorXd s;
  bool converged = false;
  bool diverged = false;
  int iterations = 0;
};

class NewtonSystem {
 public:
  NewtonSystem(const MatrixXd& H, const MatrixXd& G) : H_(H), G_(G) {}

  bool factor(const VectorXd& w) {
    M_ = H_;
    if (G_.rows()) M_.noalias() += G_.transpose() * w.asDiagonal() * G_;
    const double scale = std::max(1.0, M_.diagonal().cwiseAbs().maxCoeff());
    double reg = 0.0;
    for (int attempt = 0; attempt < 8; ++attempt) {
      llt_.compute(reg > 0 ? MatrixXd(M_ + reg * MatrixXd::Identity(M_.rows(), M_.cols())) : M_);
      if (llt_.info() == Eigen::Success) return true;
      reg = reg == 0.0 ? 1e-14 * scale : reg * 100;
    }
    return false;
  }

  VectorXd solve(const VectorXd& r) const { return llt_.solve(r); }

 private:
  const MatrixXd& H_;
  const MatrixXd& G_;
  MatrixXd M_;
  Eigen::LLT<MatrixXd> llt_;
};

IpmResult interior_point(const MatrixXd& H, const VectorXd& f, const MatrixXd& G, const VectorXd& h, int max_iter,
                         double tol, const VectorXd* z0) {
  const Index n = H.rows();
  const Index m = G.rows();
  IpmResult res;
  res.z = z0 ? *z0 : VectorXd::Zero(n);

  if (m == 0) {
    Eigen::LDLT<MatrixXd> ldlt(H);
    res.z = ldlt.solve(-f);
    res.lambda.resize(0);
    res.s.resize(0);
    res.converged = inf_norm(H * res.z + f) <= 1e-8 * (1 + inf_norm(f));
    return res;
  }
  if (n == 0) {
    // Nothing left to choose: the equality-determined point is either feasible or not.
    res.lambda = VectorXd::Zero(m);
    res.s = h;
    res.converged = h.minCoeff() >= -tol * (1 + inf_norm(h));
    return res;
  }

  VectorXd s = h - G * res.z;
  for (Index i = 0; i < m; ++i) s(i) = std::max(s(i), 1.0);
  VectorXd lambda = VectorXd::Ones(m);

  NewtonSystem newton(H, G);
  const double f_scale = 1.0 + inf_norm(f);
  const double h_scale = 1.0 + inf_norm(h);
  int stalls = 0;

  for (int it = 0; it < max_iter; ++it) {
    res.iterations = it + 1;
    const VectorXd rd = H * res.z + f + G.transpose() * lambda;
    const VectorXd rp = G * res.z + s - h;
    const double mu = s.dot(lambda) / double(m);
    const double obj = 0.5 * res.z.dot(H * res.z) + f.dot(res.z);
    if (inf_norm(rd) <= tol * f_scale && inf_norm(rp) <= tol * h_scale && mu * m <= tol * (1 + std::abs(obj))) {
      res.converged = true;
      break;
    }
    if (inf_norm(lambda) > 1e14 || mu > 1e14) {
      res.diverged = true;
      break;
    }

    const VectorXd w = lambda.cwiseQuotient(s);
    if (!newton.factor(w)) break;

    auto direction = [&](const VectorXd& rc, VectorXd& dz, VectorXd& ds, VectorXd& dl) {
      // rc = target complementarity residual, S lambda + ... = rc
      const VectorXd t = (rc + lambda.cwiseProduct(rp)).cwiseQuotient(s);
      dz = newton.solve(-rd - G.transpose() * t);
      ds = -rp - G * dz;
      dl = (rc - lambda.cwiseProduct(ds)).cwiseQuotient(s);
    };

    VectorXd dz, ds, dl;
    const VectorXd rc_aff = -s.cwiseProduct(lambda);
    direction(rc_aff, dz, ds, dl);
    const double a_aff = std::min(max_step(s, ds), max_step(lambda, dl));
    const double mu_aff = (s + a_aff * ds).dot(lambda + a_aff * dl) / double(m);
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

    const VectorXd rc = rc_aff - ds.cwiseProduct(dl) + VectorXd::Constant(m, sigma * mu);
    direction(rc, dz, ds, dl);
    const double alpha = std::min(1.0, 0.99 * std::min(max_step(s, ds), max_step(lambda, dl)));
    if (alpha < 1e-12) {
      if (++stalls > 3) break;
    } else {
      stalls = 0;
    }
    res.z += alpha * dz;
    s += alpha * ds;
    lambda += alpha * dl;
    // Keep strict interiority against round-off.
    s = s.cwiseMax(1e-300);
    lambda = lambda.cwiseMax(1e-300);
  }
  res.lambda = lambda;
  res.s = s;
  return res;
}

/// Active-set refinement: solve the KKT system of the rows the interior point flags as active.
bool polish(const MatrixXd& H, const VectorXd& f, const MatrixXd& G, const VectorXd& h, IpmResult& r) {
  const Index n = H.rows();
  std::vector<Index> active;
  for (Index i = 0; i < G.rows(); ++i)
    if (r.lambda(i) > r.s(i)) active.push_back(i);
  const Index na = static_cast<Index>(active.size());
  if (na > n) return false;

  MatrixXd K = MatrixXd::Zero(n + na, n + na);
  VectorXd rhs(n + na);
  K.topLeftCorner(n, n) = H;
  rhs.head(n) = -f;
  for (Index a = 0; a < na; ++a) {
    K.block(0, n + a, n, 1) = G.row(active[a]).transpose();
    K.block(n + a, 0, 1, n) = G.row(active[a]);
    rhs(n + a) = h(active[a]);
  }
  // Regularized quasi-definite factorization plus iterative refinement on the exact system.
  const double delta = 1e-9;
  MatrixXd Kreg = K;
  Kreg.topLeftCorner(n, n).diagonal().array() += delta;
  Kreg.bottomRightCorner(na, na).diagonal().array() -= delta;
  Eigen::PartialPivLU<MatrixXd> lu(Kreg);
  VectorXd sol = lu.solve(rhs);
  for (int k = 0; k < 5; ++k) sol += lu.solve(rhs - K * sol);
  if (!sol.allFinite()) return false;

  VectorXd z = sol.head(n);
  VectorXd lambda = VectorXd::Zero(G.rows());
  for (Index a = 0; a < na; ++a) lambda(active[a]) = sol(n + a);
  const VectorXd slack = h - G * z;

  const double feas_tol = 1e-12 * (1 + inf_norm(h));
  if (slack.size() && slack.minCoeff() < -feas_tol) return false;
  if (lambda.size() && lambda.minCoeff() < -1e-12 * (1 + inf_norm(lambda))) return false;

  auto merit = [&](const VectorXd& zz, const VectorXd& ll, const VectorXd& ss) {
    double v = inf_norm(H * zz + f + G.transpose() * ll);
    for (Index i = 0; i < ss.size(); ++i) v = std::max(v, std::abs(ll(i) * ss(i)));
    return v;
  };
  if (merit(z, lambda, slack.cwiseMax(0.0)) > merit(r.z, r.lambda, r.s)) return false;
  r.z = std::move(z);
  r.lambda = lambda.cwiseMax(0.0);
  r.s = slack.cwiseMax(0.0);
  return true;
}

/// min tau  s.t. G z - tau <= h, tau >= -1; returns the multipliers of the G rows.
std::pair<double, VectorXd> phase_one(const MatrixXd& G, const VectorXd& h, int max_iter) {
  const Index n = G.cols();
  const Index m = G.rows();
  MatrixXd H1 = 1e-10 * MatrixXd::Identity(n + 1, n + 1);
  VectorXd f1 = VectorXd::Zero(n + 1);
  f1(n) = 1.0;
  MatrixXd G1 = MatrixXd::Zero(m + 1, n + 1);
  G1.topLeftCorner(m, n) = G;
  G1.block(0, n, m, 1).setConstant(-1.0);
  G1(m, n) = -1.0;
  VectorXd h1(m + 1);
  h1.head(m) = h;
  h1(m) = 1.0;
  VectorXd z0 = VectorXd::Zero(n + 1);
  z0(n) = std::max(0.0, (-h).maxCoeff()) + 1.0;
  IpmResult r = interior_point(H1, f1, G1, h1, std::max(max_iter, 200), 1e-12, &z0);
  return {r.z(n), r.lambda.head(m)};
}

}  // namespace

void QPProblem::validate() {
  const Index d = H.rows();
  if (H.cols() != d) throw std::invalid_argument("QPProblem: H must be square");
  if (f.size() != d) throw std::invalid_argument("QPProblem: f has wrong length");
  if (Aeq.rows() != beq.size() || (Aeq.rows() > 0 && Aeq.cols() != d))
    throw std::invalid_argument("QPProblem: Aeq/beq dimension mismatch");
  if (Aineq.rows() != bineq.size() || (Aineq.rows() > 0 && Aineq.cols() != d))
    throw std::invalid_argument("QPProblem: Aineq/bineq dimension mismatch");
  if (Aeq.cols() != d) Aeq.resize(0, d);
  if (Aineq.cols() != d) Aineq.resize(0, d);
  if (!names.empty() && static_cast<Index>(names.size()) != d)
    throw std::invalid_argument("QPProblem: names must label every variable");
  if (!H.allFinite() || !f.allFinite() || !Aeq.allFinite() || !beq.allFinite() || !Aineq.allFinite() ||
      !bineq.allFinite())
    throw std::invalid_argument("QPProblem: non-finite data");
  H = 0.5 * (H + H.transpose()).eval();
}

double QPProblem::objective(const VectorXd& x) const { return 0.5 * x.dot(H * x) + f.dot(x); }

const char* to_string(QPStatus s) {
  switch (s) {
    case QPStatus::optimal: return "optimal";
    case QPStatus::infeasible: return "infeasible";
    case QPStatus::max_iter: return "max_iter";
  }
  return "unknown";
}

double KKTResiduals::max() const {
  return std::max({stationarity, primal_eq, primal_ineq, complementarity, dual_sign});
}

KKTResiduals kkt_residuals(const QPProblem& qp, const VectorXd& x, const VectorXd& nu_eq,
                           const VectorXd& lambda_ineq) {
  KKTResiduals r;
  const VectorXd Hx = qp.H * x;
  VectorXd grad = Hx + qp.f;
  // Stationarity and complementarity relative to the largest gradient term, so
  // that objectives with huge penalty weights are judged on the same footing.
  double scale = std::max({1.0, inf_norm(Hx), inf_norm(qp.f)});
  if (qp.equalities()) {
    const VectorXd t = qp.Aeq.transpose() * nu_eq;
    grad += t;
    scale = std::max(scale, inf_norm(t));
  }
  if (qp.inequalities()) {
    const VectorXd t = qp.Aineq.transpose() * lambda_ineq;
    grad += t;
    scale = std::max(scale, inf_norm(t));
  }
  r.stationarity = inf_norm(grad) / scale;
  for (Index i = 0; i < qp.equalities(); ++i) {
    const double nrm = qp.Aeq.row(i).norm();
    const double res = qp.Aeq.row(i).dot(x) - qp.beq(i);
    r.primal_eq = std::max(r.primal_eq, nrm > 0 ? std::abs(res) / nrm : std::abs(res));
  }
  for (Index i = 0; i < qp.inequalities(); ++i) {
    const double nrm = qp.Aineq.row(i).norm();
    const double res = qp.Aineq.row(i).dot(x) - qp.bineq(i);
    const double scaled = nrm > 0 ? res / nrm : res;
    r.primal_ineq = std::max(r.primal_ineq, scaled);
    // lambda scales by the row norm when the row is normalized, so the product is invariant.
    r.complementarity = std::max(r.complementarity, std::abs(lambda_ineq(i) * res) / scale);
    r.dual_sign = std::max(r.dual_sign, -lambda_ineq(i) * nrm / scale);
  }
  return r;
}

std::pair<double, double> farkas_residual(const QPProblem& qp, const VectorXd& y_eq, const VectorXd& y_ineq) {
  VectorXd comb = VectorXd::Zero(qp.dim());
  double rhs = 0;
  if (qp.equalities()) {
    comb += qp.Aeq.transpose() * y_eq;
    rhs += qp.beq.dot(y_eq);
  }
  if (qp.inequalities()) {
    comb += qp.Aineq.transpose() * y_ineq;
    rhs += qp.bineq.dot(y_ineq);
  }
  return {inf_norm(comb), rhs};
}

struct QPSolver::Structure {
  MatrixXd H, Aeq, Aineq;  // keys
  VectorXd eq_scale, in_scale;
  Index rank = 0;
  std::vector<Index> independent;  // rows of Aeq kept
  MatrixXd Q1;                     // range of scaled Aeq'
  MatrixXd R11;                    // upper triangular, rank x rank
  MatrixXd Z;                      // null space basis
  MatrixXd Hr;                     // Z'HZ (possibly regularized)
  MatrixXd Gr;                     // normalized reduced inequality rows
  VectorXd gr_norm;                // norm of each scaled row after reduction (0 = dropped)
  std::vector<Index> live;         // inequality rows that remain after reduction
  MatrixXd Gs;                     // scaled inequality rows in full space
  MatrixXd As;                     // scaled equality rows in full space
};

QPSolver::QPSolver(QPSettings settings) : settings_(settings) {}
QPSolver::~QPSolver() = default;
QPSolver::QPSolver(QPSolver&&) noexcept = default;
QPSolver& QPSolver::operator=(QPSolver&&) noexcept = default;

std::shared_ptr<const QPSolver::Structure> QPSolver::structure_for(const QPProblem& qp) {
  for (const auto& s : cache_)
    if (s->H.rows() == qp.H.rows() && s->Aeq.rows() == qp.Aeq.rows() && s->Aineq.rows() == qp.Aineq.rows() &&
        s->H == qp.H && s->Aeq == qp.Aeq && s->Aineq == qp.Aineq)
      return s;

  auto st = std::make_shared<Structure>();
  st->H = qp.H;
  st->Aeq = qp.Aeq;
  st->Aineq = qp.Aineq;
  const Index d = qp.dim();

  st->eq_scale = inverse_or_zero(row_norms(qp.Aeq));
  st->in_scale = inverse_or_zero(row_norms(qp.Aineq));
  st->As = st->eq_scale.asDiagonal() * qp.Aeq;
  st->Gs = st->in_scale.asDiagonal() * qp.Aineq;

  if (qp.equalities() > 0) {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(st->As.transpose());
    const MatrixXd R = qr.matrixR().triangularView<Eigen::Upper>();
    const double r00 = R.rows() && R.cols() ? std::abs(R(0, 0)) : 0.0;
    Index rank = 0;
    while (rank < std::min(R.rows(), R.cols()) && std::abs(R(rank, rank)) > settings_.rank_tolerance * r00) ++rank;
    st->rank = rank;
    const MatrixXd Qfull = qr.householderQ() * MatrixXd::Identity(d, d);
    st->Q1 = Qfull.leftCols(rank);
    st->Z = Qfull.rightCols(d - rank);
    st->R11 = R.topLeftCorner(rank, rank);
    const auto& perm = qr.colsPermutation().indices();
    for (Index k = 0; k < rank; ++k) st->independent.push_back(perm(k));
  } else {
    st->Z = MatrixXd::Identity(d, d);
  }

  st->Hr = st->Z.transpose() * qp.H * st->Z;
  st->Hr = 0.5 * (st->Hr + st->Hr.transpose()).eval();
  if (st->Hr.rows() > 0) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(st->Hr, Eigen::EigenvaluesOnly);
    const double lmin = es.eigenvalues()(0);
    if (lmin < -1e-9) throw std::invalid_argument("QP Hessian is not positive semidefinite on the feasible subspace");
    if (lmin < 1e-8) st->Hr.diagonal().array() += 1e-9;
  }

  const MatrixXd G = st->Gs * st->Z;
  st->gr_norm = row_norms(G);
  for (Index i = 0; i < G.rows(); ++i)
    if (st->gr_norm(i) > 1e-12) st->live.push_back(i);
  st->Gr.resize(static_cast<Index>(st->live.size()), st->Z.cols());
  for (std::size_t k = 0; k < st->live.size(); ++k)
    st->Gr.row(Index(k)) = G.row(st->live[k]) / st->gr_norm(st->live[k]);

  cache_.insert(cache_.begin(), st);
  if (cache_.size() > 4) cache_.pop_back();
  return st;
}

QPSolution QPSolver::solve(const QPProblem& problem, const VectorXd* warm_start) {
  QPProblem qp = problem;
  qp.validate();
  const auto st = structure_for(qp);
  const Index d = qp.dim();

  QPSolution sol;
  sol.lambda_ineq = VectorXd::Zero(qp.inequalities());
  sol.nu_eq = VectorXd::Zero(qp.equalities());

  const VectorXd beq_s = st->eq_scale.cwiseProduct(qp.beq);
  const VectorXd bin_s = st->in_scale.cwiseProduct(qp.bineq);

  // Particular solution of the equality rows.
  VectorXd xp = VectorXd::Zero(d);
  if (st->rank > 0) {
    VectorXd bI(st->rank);
    for (Index k = 0; k < st->rank; ++k) bI(k) = beq_s(st->independent[k]);
    const VectorXd y = st->R11.transpose().triangularView<Eigen::Lower>().solve(bI);
    xp = st->Q1 * y;
  }
  if (qp.equalities() > 0) {
    const VectorXd res = st->As * xp - beq_s;
    if (inf_norm(res) > 1e-9 * (1 + inf_norm(beq_s))) {
      // Aeq x = beq inconsistent: the least-squares residual r gives Aeq'r = 0 and beq'r > 0.
      sol.status = QPStatus::infeasible;
      const VectorXd r_ls = beq_s - st->As * st->As.completeOrthogonalDecomposition().solve(beq_s);
      sol.certificate_eq = st->eq_scale.cwiseProduct(-r_ls);
      sol.certificate_ineq = VectorXd::Zero(qp.inequalities());
      sol.x = xp;
      sol.objective = qp.objective(xp);
      return sol;
    }
  }

  // Reduced inequality data.
  const VectorXd h_full = bin_s - st->Gs * xp;
  for (Index i = 0; i < qp.inequalities(); ++i) {
    if (st->gr_norm(i) > 1e-12) continue;
    if (h_full(i) < -1e-9) {
      sol.status = QPStatus::infeasible;
      // Row i is constant on the affine set: combine it with equality rows.
      sol.certificate_ineq = VectorXd::Zero(qp.inequalities());
      sol.certificate_ineq(i) = st->in_scale(i);
      const VectorXd g = st->Gs.row(i).transpose();
      VectorXd nu = VectorXd::Zero(qp.equalities());
      if (st->rank > 0) {
        const VectorXd nuI = st->R11.triangularView<Eigen::Upper>().solve(st->Q1.transpose() * (-g));
        for (Index k = 0; k < st->rank; ++k) nu(st->independent[k]) = nuI(k);
      }
      sol.certificate_eq = st->eq_scale.cwiseProduct(nu);
      sol.x = xp;
      sol.objective = qp.objective(xp);
      return sol;
    }
  }
  const Index m = st->Gr.rows();
  VectorXd hr(m);
  for (Index k = 0; k < m; ++k) hr(k) = h_full(st->live[k]) / st->gr_norm(st->live[k]);
  const VectorXd fr = st->Z.transpose() * (qp.H * xp + qp.f);

  VectorXd z0;
  const VectorXd* z0p = nullptr;
  if (warm_start && warm_start->size() == d) {
    z0 = st->Z.transpose() * (*warm_start - xp);
    z0p = &z0;
  }
  IpmResult r = interior_point(st->Hr, fr, st->Gr, hr, settings_.max_iter, settings_.tolerance, z0p);
  if (!r.converged && z0p) r = interior_point(st->Hr, fr, st->Gr, hr, settings_.max_iter, settings_.tolerance, nullptr);
  // Large objective coefficients inflate the multipliers; retry on a rescaled objective.
  const double obj_scale = std::max({1.0, st->Hr.size() ? st->Hr.cwiseAbs().maxCoeff() : 0.0, inf_norm(fr)});
  if (!r.converged && obj_scale > 1.0) {
    IpmResult rs = interior_point(MatrixXd(st->Hr / obj_scale), fr / obj_scale, st->Gr, hr, settings_.max_iter,
                                  settings_.tolerance, nullptr);
    if (rs.converged) {
      rs.lambda *= obj_scale;
      r = std::move(rs);
    }
  }
  sol.iterations = r.iterations;

  if (!r.converged && m > 0) {
    auto [tau, y] = phase_one(st->Gr, hr, settings_.max_iter);
    if (tau > 1e-8) {
      sol.status = QPStatus::infeasible;
      // Map reduced multipliers back to the raw rows, then solve for the equality part.
      VectorXd yin = VectorXd::Zero(qp.inequalities());
      for (Index k = 0; k < m; ++k) yin(st->live[k]) = y(k) / st->gr_norm(st->live[k]);
      const VectorXd g = st->Gs.transpose() * yin;
      VectorXd nu = VectorXd::Zero(qp.equalities());
      if (st->rank > 0) {
        const VectorXd nuI = st->R11.triangularView<Eigen::Upper>().solve(st->Q1.transpose() * (-g));
        for (Index k = 0; k < st->rank; ++k) nu(st->independent[k]) = nuI(k);
      }
      const double total = yin.sum();
      sol.certificate_ineq = st->in_scale.cwiseProduct(yin) / (total > 0 ? total : 1.0);
      sol.certificate_eq = st->eq_scale.cwiseProduct(nu) / (total > 0 ? total : 1.0);
      sol.x = xp + st->Z * r.z;
      sol.objective = qp.objective(sol.x);
      return sol;
    }
  }

  if (settings_.polish && m > 0 && r.converged) polish(st->Hr, fr, st->Gr, hr, r);

  sol.x = xp + st->Z * r.z;
  sol.objective = qp.objective(sol.x);

  // Multipliers in raw row units.
  VectorXd lam_s = VectorXd::Zero(qp.inequalities());
  for (Index k = 0; k < m; ++k) lam_s(st->live[k]) = r.lambda(k) / st->gr_norm(st->live[k]);
  sol.lambda_ineq = st->in_scale.cwiseProduct(lam_s);
  if (st->rank > 0) {
    const VectorXd g = qp.H * sol.x + qp.f + st->Gs.transpose() * lam_s;
    const VectorXd nuI = st->R11.triangularView<Eigen::Upper>().solve(st->Q1.transpose() * (-g));
    VectorXd nu_s = VectorXd::Zero(qp.equalities());
    for (Index k = 0; k < st->rank; ++k) nu_s(st->independent[k]) = nuI(k);
    sol.nu_eq = st->eq_scale.cwiseProduct(nu_s);
  }
  sol.kkt = kkt_residuals(qp, sol.x, sol.nu_eq, sol.lambda_ineq);
  sol.status = r.converged || sol.kkt.max() <= 1e-7 ? QPStatus::optimal : QPStatus::max_iter;
  return sol;
}

QPSolution solve_qp(const QPProblem& qp, const QPSettings& settings) {
  QPSolver solver(settings);
  return solver.solve(qp);
}

Index soc_aux_count(std::span<const SocRowGroup> groups) {
  Index n = 0;
  for (const auto& g : groups) n += static_cast<Index>(g.pairs.size());
  return n;
}

LinearInequalities soc_rows(std::span<const SocRowGroup> groups, const VectorXd& bounds, int facets) {
  if (facets < 3) throw std::invalid_argument("soc_rows: need at least three facets");
  if (static_cast<Index>(groups.size()) != bounds.size())
    throw std::invalid_argument("soc_rows: one bound per group required");
  const Index nv = groups.empty() ? 0 : groups.front().constant.size();
  const Index nt = soc_aux_count(groups);
  Index rows = 0;
  for (const auto& g : groups) rows += 1 + facets * static_cast<Index>(g.pairs.size());

  LinearInequalities out{MatrixXd::Zero(rows, nv + nt), VectorXd::Zero(rows)};
  const double c = std::cos(std::numbers::pi / facets);
  Index row = 0, t = nv;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    if (g.constant.size() != nv) throw std::invalid_argument("soc_rows: inconsistent row width");
    const bool has_pairs = !g.pairs.empty();
    const double scale = has_pairs ? c : 1.0;
    out.A.block(row, 0, 1, nv) = scale * g.constant;
    for (std::size_t j = 0; j < g.pairs.size(); ++j) out.A(row, t + Index(j)) = 1.0;
    out.b(row) = scale * bounds(Index(i));
    ++row;
    for (const auto& [a, b] : g.pairs) {
      if (a.size() != nv || b.size() != nv) throw std::invalid_argument("soc_rows: inconsistent row width");
      for (int k = 0; k < facets; ++k) {
        const double phi = 2.0 * std::numbers::pi * k / facets;
        out.A.block(row, 0, 1, nv) = std::cos(phi) * a + std::sin(phi) * b;
        out.A(row, t) = -1.0;
        ++row;
      }
      ++t;
    }
  }
  return out;
}

VectorXd soc_aux_values(std::span<const SocRowGroup> groups, const VectorXd& v, int facets) {
  VectorXd t(soc_aux_count(groups));
  Index k = 0;
  for (const auto& g : groups)
    for (const auto& [a, b] : g.pairs) {
      const double av = a.dot(v), bv = b.dot(v);
      double best = -kInf;
      for (int f = 0; f < facets; ++f) {
        const double phi = 2.0 * std::numbers::pi * f / facets;
        best = std::max(best, std::cos(phi) * av + std::sin(phi) * bv);
      }
      t(k++) = best;
    }
  return t;
}

bool soc_feasible(std::span<const SocRowGroup> groups, const VectorXd& bounds, const VectorXd& v, int facets,
                  double tol) {
  const auto rows = soc_rows(groups, bounds, facets);
  VectorXd full(v.size() + soc_aux_count(groups));
  full.head(v.size()) = v;
  full.tail(full.size() - v.size()) = soc_aux_values(groups, v, facets);
  return rows.A.rows() == 0 || (rows.A * full - rows.b).maxCoeff() <= tol;
}

namespace {

void write_block(std::ostream& os, const char* name, const MatrixXd& M) {
  os << name << ' ' << M.rows() << ' ' << M.cols() << '\n';
  for (Index i = 0; i < M.rows(); ++i) {
    for (Index j = 0; j < M.cols(); ++j) os << (j ? " " : "") << M(i, j);
    os << '\n';
  }
}

MatrixXd read_block(std::istream& is, const std::string& expected) {
  std::string name;
  Index r = 0, c = 0;
  if (!(is >> name >> r >> c) || name != expected)
    throw std::runtime_error("read_qp: expected block '" + expected + "'");
  MatrixXd M(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j)
      if (!(is >> M(i, j))) throw std::runtime_error("read_qp: truncated block '" + expected + "'");
  return M;
}

}  // namespace

void write_qp(std::ostream& os, const QPProblem& qp) {
  const auto flags = os.flags();
  const auto prec = os.precision();
  os << std::setprecision(17);
  os << "# immpc-qp 1\n";
  os << "dims " << qp.dim() << ' ' << qp.equalities() << ' ' << qp.inequalities() << '\n';
  os << "names";
  if (qp.names.empty())
    os << " -";
  else
    for (const auto& n : qp.names) os << ' ' << n;
  os << '\n';
  write_block(os, "H", qp.H);
  write_block(os, "f", qp.f.transpose());
  write_block(os, "Aeq", qp.Aeq);
  write_block(os, "beq", qp.beq.transpose());
  write_block(os, "Aineq", qp.Aineq);
  write_block(os, "bineq", qp.bineq.transpose());
  os.flags(flags);
  os.precision(prec);
}

QPProblem read_qp(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("# immpc-qp", 0) != 0)
    throw std::runtime_error("read_qp: missing header");
  std::string tag;
  Index d = 0, e = 0, i = 0;
  if (!(is >> tag >> d >> e >> i) || tag != "dims") throw std::runtime_error("read_qp: missing dims");
  std::getline(is, line);
  if (!std::getline(is, line)) throw std::runtime_error("read_qp: missing names");
  std::istringstream ns(line);
  ns >> tag;
  QPProblem qp;
  std::string n;
  while (ns >> n) qp.names.push_back(n);
  if (qp.names.size() == 1 && qp.names[0] == "-") qp.names.clear();

  qp.H = read_block(is, "H");
  qp.f = read_block(is, "f").transpose();
  qp.Aeq = read_block(is, "Aeq");
  qp.beq = read_block(is, "beq").transpose();
  qp.Aineq = read_block(is, "Aineq");
  qp.bineq = read_block(is, "bineq").transpose();
  if (qp.dim() != d || qp.equalities() != e || qp.inequalities() != i)
    throw std::runtime_error("read_qp: block sizes disagree with dims");
  if (qp.Aeq.rows() == 0) qp.Aeq.resize(0, d);
  if (qp.Aineq.rows() == 0) qp.Aineq.resize(0, d);
  return qp;
}

}  // namespace immpc
