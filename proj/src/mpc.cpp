#include "immpc/mpc.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

namespace immpc {

namespace {

/// Affine map v -> sum_j T_j v[col_j : col_j + cols(T_j)] + c.
struct Affine {
  std::vector<std::pair<Index, MatrixXd>> terms;
  VectorXd c;

  Index rows() const { return c.size(); }
};

Affine operator+(Affine a, const Affine& b) {
  a.terms.insert(a.terms.end(), b.terms.begin(), b.terms.end());
  a.c += b.c;
  return a;
}

Affine operator*(const MatrixXd& M, const Affine& a) {
  Affine r;
  r.terms.reserve(a.terms.size());
  for (const auto& [col, T] : a.terms) r.terms.emplace_back(col, M * T);
  r.c = M * a.c;
  return r;
}

Affine operator*(double s, const Affine& a) {
  Affine r = a;
  for (auto& t : r.terms) t.second *= s;
  r.c *= s;
  return r;
}

Affine operator-(const Affine& a, const Affine& b) { return a + (-1.0) * b; }

Affine variable(Index col, Index dim) { return {{{col, MatrixXd::Identity(dim, dim)}}, VectorXd::Zero(dim)}; }
Affine constant(const VectorXd& v) { return {{}, v}; }

/// Collects rows and the quadratic cost over a fixed variable width.
class Assembler {
 public:
  explicit Assembler(Index width) : width_(width), H_(MatrixXd::Zero(width, width)), f_(VectorXd::Zero(width)) {}

  void equal_zero(const Affine& e) { eq_.push_back(e); }
  void at_most_zero(const Affine& e, bool state_row) {
    ineq_.push_back(e);
    state_row_.push_back(state_row);
  }
  void raw_inequalities(const MatrixXd& A, const VectorXd& b, std::vector<bool> state_rows) {
    raw_A_ = A;
    raw_b_ = b;
    raw_state_ = std::move(state_rows);
  }

  /// Adds ||e||^2_W.
  void cost(const MatrixXd& W, const Affine& e) {
    for (const auto& [ci, Ti] : e.terms) {
      const MatrixXd TiW = Ti.transpose() * W;
      for (const auto& [cj, Tj] : e.terms) H_.block(ci, cj, Ti.cols(), Tj.cols()) += 2.0 * TiW * Tj;
      f_.segment(ci, Ti.cols()) += 2.0 * TiW * e.c;
    }
    constant_ += e.c.dot(W * e.c);
  }

  MPCProblem finish(const VariableLayout& layout) {
    MPCProblem out;
    out.layout = layout;
    out.constant = constant_;
    out.qp.H = 0.5 * (H_ + H_.transpose());
    out.qp.f = f_;
    fill(eq_, out.qp.Aeq, out.qp.beq);
    MatrixXd A;
    VectorXd b;
    fill(ineq_, A, b);
    out.reference_rows_begin = A.rows();
    out.qp.Aineq.resize(A.rows() + raw_A_.rows(), width_);
    out.qp.bineq.resize(A.rows() + raw_A_.rows());
    out.qp.Aineq << A, raw_A_;
    out.qp.bineq << b, raw_b_;
    out.state_row = state_row_;
    out.state_row.insert(out.state_row.end(), raw_state_.begin(), raw_state_.end());
    out.state_row.resize(static_cast<std::size_t>(out.qp.Aineq.rows()), false);
    return out;
  }

 private:
  void fill(const std::vector<Affine>& rows, MatrixXd& A, VectorXd& b) const {
    Index total = 0;
    for (const auto& e : rows) total += e.rows();
    A = MatrixXd::Zero(total, width_);
    b.resize(total);
    Index r = 0;
    for (const auto& e : rows) {
      for (const auto& [col, T] : e.terms) A.block(r, col, T.rows(), T.cols()) += T;
      b.segment(r, e.rows()) = -e.c;
      r += e.rows();
    }
  }

  Index width_;
  MatrixXd H_;
  VectorXd f_;
  double constant_ = 0.0;
  std::vector<Affine> eq_, ineq_;
  std::vector<bool> state_row_, raw_state_;
  MatrixXd raw_A_ = MatrixXd(0, 0);
  VectorXd raw_b_ = VectorXd(0);
};

VariableLayout make_layout(const MPCConfig& cfg, bool with_reference) {
  VariableLayout L;
  L.n = cfg.n();
  L.m = cfg.m();
  L.p = cfg.p();
  L.N = cfg.N;
  Index off = 0;
  L.ex = off;
  off += L.N * L.n;
  L.eu = off;
  off += (L.N + 1) * L.m;
  L.x = off;
  off += L.N * L.n;
  L.u = off;
  off += (L.N + 1) * L.m;
  L.y = off;
  off += L.N * L.p;
  L.theta_x = off;
  if (with_reference) {
    const Index d = cfg.gen.dimension();
    off += L.n * d;
    L.theta_u = off;
    off += L.m * d;
    L.theta_y = off;
    off += L.p * cfg.gen_a.dimension();
  } else {
    L.theta_u = L.theta_y = off;
  }
  L.aux = off;
  L.size = off;
  return L;
}

/// Trajectory signals at prediction index k: pinned history for k <= 0, decision variables after.
class Signals {
 public:
  Signals(const MPCConfig& cfg, const PredictionHistory& h, const VariableLayout& L) : cfg_(cfg), h_(h), L_(L) {}

  Affine ex(Index k) const { return k <= 0 ? constant(pinned(h_.ex, -k, "e~x")) : variable(L_.ex_col(k), L_.n); }
  Affine eu(Index k) const { return k < 0 ? constant(pinned(h_.eu, -k - 1, "e~u")) : variable(L_.eu_col(k), L_.m); }
  Affine x(Index k) const { return k <= 0 ? constant(pinned(h_.x, -k, "x")) : variable(L_.x_col(k), L_.n); }
  Affine u(Index k) const { return k < 0 ? constant(pinned(h_.u, -k - 1, "u")) : variable(L_.u_col(k), L_.m); }
  Affine y(Index k) const { return k <= 0 ? constant(pinned(h_.y, -k, "y")) : variable(L_.y_col(k), L_.p); }

  /// sum_i Q_{x,i} e~x_{k-i}
  Affine Qx_ex(Index k) const {
    Affine a = cfg_.Gx.Q(0) * ex(k);
    for (Index i = 1; i <= cfg_.ndx(); ++i) a = a + cfg_.Gx.Q(i) * ex(k - i);
    return a;
  }
  Affine Qu_eu(Index k) const {
    Affine a = cfg_.Gu.Q(0) * eu(k);
    for (Index i = 1; i <= cfg_.ndu(); ++i) a = a + cfg_.Gu.Q(i) * eu(k - i);
    return a;
  }
  /// sum_i p_i s_{k-i}
  template <typename F>
  Affine p_sum(F&& s, Index k) const {
    const auto& p = cfg_.Gx.denominator();
    Affine a = p[0] * s(k);
    for (Index i = 1; i <= p.degree(); ++i) a = a + p[i] * s(k - i);
    return a;
  }

 private:
  static const VectorXd& pinned(const std::vector<VectorXd>& hist, Index i, const char* what) {
    if (i >= static_cast<Index>(hist.size()))
      throw std::invalid_argument(std::string("prediction history too short for ") + what);
    return hist[static_cast<std::size_t>(i)];
  }

  const MPCConfig& cfg_;
  const PredictionHistory& h_;
  const VariableLayout& L_;
};

void check_history(const MPCConfig& cfg, const PredictionHistory& h) {
  auto check = [](const std::vector<VectorXd>& v, Index depth, Index dim, const char* what) {
    if (static_cast<Index>(v.size()) != depth) throw std::invalid_argument(std::string("history depth mismatch: ") + what);
    for (const auto& e : v)
      if (e.size() != dim) throw std::invalid_argument(std::string("history dimension mismatch: ") + what);
  };
  check(h.x, cfg.nn(), cfg.n(), "x");
  check(h.y, cfg.nn(), cfg.p(), "y");
  check(h.u, cfg.nn(), cfg.m(), "u");
  check(h.ex, cfg.ndx() + 1, cfg.n(), "e~x");
  check(h.eu, cfg.ndu(), cfg.m(), "e~u");
  if (cfg.lowpass_alpha > 0 && h.x_filtered.size() != cfg.n())
    throw std::invalid_argument("history dimension mismatch: filtered state");
}

/// Rows shared by both problems: prediction recursions and (x_k, u_k) in Z.
void trajectory_rows(const MPCConfig& cfg, const PredictionHistory& h, const Signals& s, Assembler& as) {
  const auto& sys = cfg.plant;
  const auto& poly = cfg.constraints;
  for (Index k = 1; k <= cfg.N; ++k) {
    as.equal_zero(s.Qx_ex(k) - (sys.A * s.Qx_ex(k - 1) + sys.B * s.Qu_eu(k - 1)));
    as.equal_zero(s.p_sum([&](Index j) { return s.y(j); }, k) - sys.C * s.Qx_ex(k));
    as.equal_zero(s.p_sum([&](Index j) { return s.x(j); }, k) - s.Qx_ex(k));
  }
  for (Index k = 0; k <= cfg.N; ++k) as.equal_zero(s.p_sum([&](Index j) { return s.u(j); }, k) - s.Qu_eu(k));

  const double a = cfg.lowpass_alpha;
  Affine xf = a > 0 ? constant(h.x_filtered) : s.x(0);
  for (Index k = 0; k <= cfg.N; ++k) {
    if (a > 0 && k > 0) xf = (1 - a) * xf + a * s.x(k - 1);
    const Affine xk = a > 0 ? xf : s.x(k);
    for (Index i = 0; i < poly.rows(); ++i) {
      const Affine row = poly.Cbar.row(i) * xk + poly.Dbar.row(i) * s.u(k) - constant(poly.cbar.segment(i, 1));
      as.at_most_zero(row, poly.is_state_row(i));
    }
  }
}

std::vector<SocRowGroup> reference_groups(const MPCConfig& cfg, const VariableLayout& L) {
  return reference_row_groups(cfg.gen, cfg.constraints, L.aux, L.theta_x, L.theta_u);
}

Affine reference_signal(const SignalGenerator<double>& gen, Index count, Index offset, Index k) {
  return {{{offset, gen.trajectory_map(count, k)}}, VectorXd::Zero(count)};
}

std::vector<std::string> variable_names(const VariableLayout& L) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(L.size));
  auto add = [&](const std::string& base, Index k0, Index k1, Index dim) {
    for (Index k = k0; k <= k1; ++k)
      for (Index i = 0; i < dim; ++i) names.push_back(base + "[" + std::to_string(k) + "]" + std::to_string(i + 1));
  };
  add("ex", 1, L.N, L.n);
  add("eu", 0, L.N, L.m);
  add("x", 1, L.N, L.n);
  add("u", 0, L.N, L.m);
  add("y", 1, L.N, L.p);
  for (Index i = L.theta_x; i < L.theta_u; ++i) names.push_back("theta_x" + std::to_string(i - L.theta_x));
  for (Index i = L.theta_u; i < L.theta_y; ++i) names.push_back("theta_u" + std::to_string(i - L.theta_u));
  for (Index i = L.theta_y; i < L.aux; ++i) names.push_back("theta_y" + std::to_string(i - L.theta_y));
  for (Index i = 0; i < L.aux_count; ++i) names.push_back("t" + std::to_string(i));
  if (L.slack >= 0) names.push_back("slack");
  return names;
}

VectorXd segment(const VectorXd& v, Index col, Index dim) { return v.segment(col, dim); }

/**
 * The penalized problem is badly scaled once the slack is large (the penalty
 * dwarfs every other term), so failing that it is solved lexicographically:
 * smallest slack first, then the regular cost with the slack capped there.
 */
QPSolution solve_softened(QPSolver& solver, const MPCProblem& soft) {
  QPSolution sol = solver.solve(soft.qp);
  if (sol.optimal()) return sol;
  const Index s = soft.layout.slack;
  QPProblem lp = soft.qp;
  lp.H.setZero();
  lp.f.setZero();
  lp.f(s) = 1.0;
  const QPSolution first = solve_qp(lp, solver.settings());
  if (!first.optimal()) return sol;

  QPProblem capped = soft.qp;
  capped.H(s, s) = 0.0;
  const Index r = capped.Aineq.rows();
  capped.Aineq.conservativeResize(r + 1, Eigen::NoChange);
  capped.Aineq.row(r).setZero();
  capped.Aineq(r, s) = 1.0;
  capped.bineq.conservativeResize(r + 1);
  capped.bineq(r) = first.x(s) * (1 + 1e-9) + 1e-9;
  QPSolution second = solve_qp(capped, solver.settings());
  if (!second.optimal()) return sol;
  second.lambda_ineq.conservativeResize(r);
  second.objective = soft.qp.objective(second.x);
  return second;
}

}  // namespace

void MPCConfig::validate() const {
  plant.validate();
  constraints.validate(n(), m());
  auto square = [](const MatrixXd& M, Index d, const char* what) {
    if (M.rows() != d || M.cols() != d) throw std::invalid_argument(std::string("MPCConfig: ") + what + " has wrong size");
  };
  square(Q, n(), "Q");
  square(R, m(), "R");
  square(Qy, p(), "Qy");
  if (Gx.dimension() != n() || Gu.dimension() != m())
    throw std::invalid_argument("MPCConfig: filter dimensions do not match the plant");
  if (Gx.denominator().coefficients() != Gu.denominator().coefficients())
    throw std::invalid_argument("MPCConfig: G_x and G_u must share p(z)");
  if (N < nn() + std::max(ndx(), ndu()) + 1) throw std::invalid_argument("MPCConfig: horizon shorter than the filter memory");
  if (soc_facets < 4) throw std::invalid_argument("MPCConfig: soc_facets must be at least 4");
  if (!(lowpass_alpha >= 0 && lowpass_alpha <= 1)) throw std::invalid_argument("MPCConfig: lowpass_alpha outside [0, 1]");
  Eigen::SelfAdjointEigenSolver<MatrixXd> er(0.5 * (R + R.transpose())), ey(0.5 * (Qy + Qy.transpose())),
      eq(0.5 * (Q + Q.transpose()));
  if (er.eigenvalues().minCoeff() <= 0) throw std::invalid_argument("MPCConfig: R must be positive definite");
  if (ey.eigenvalues().minCoeff() <= 0) throw std::invalid_argument("MPCConfig: Qy must be positive definite");
  if (eq.eigenvalues().minCoeff() < -1e-12) throw std::invalid_argument("MPCConfig: Q must be positive semidefinite");

  // p(z) must vanish on lambda(S).
  const auto& pc = Gx.denominator();
  Eigen::EigenSolver<MatrixXd> es(gen.S(), false);
  for (Index i = 0; i < es.eigenvalues().size(); ++i) {
    const std::complex<double> lam = es.eigenvalues()(i);
    std::complex<double> acc = 0, zp = 1;
    for (Index j = 0; j <= pc.degree(); ++j) {
      acc += pc[j] * zp;
      zp /= lam;
    }
    if (std::abs(acc) > 1e-8 * pc.coefficients().cwiseAbs().sum())
      throw std::invalid_argument("MPCConfig: p(z) does not annihilate the signal generator");
  }

  if (variant == MPCVariant::artificial_reference) {
    if (gen_a.pairs() > gen.pairs() || !(gen.leading(gen_a.pairs()) == gen_a))
      throw std::invalid_argument("MPCConfig: reference frequencies must lead the generator frequencies");
    square(Pa, p() * gen_a.dimension(), "Pa");
    if (sigma.size() != constraints.rows() || (sigma.array() <= 0).any())
      throw std::invalid_argument("MPCConfig: sigma needs one positive entry per constraint row");
    const Index nx = n() * ndx(), nu = m() * ndu();
    if (terminal.Px.rows() != nx || terminal.Pu.rows() != nu)
      throw std::invalid_argument("MPCConfig: terminal cost does not match the filter degrees");
  }
}

MPCConfig make_config(const DiscreteLTI<double>& plant, const ConstraintPolytope<double>& constraints, Index N,
                      const MatrixXd& Q, const MatrixXd& R, const MatrixXd& Qy, double pa_weight, double sigma,
                      const SignalGenerator<double>& gen, Index reference_frequencies) {
  MPCConfig cfg;
  cfg.plant = plant;
  cfg.constraints = constraints;
  cfg.N = N;
  cfg.Q = Q;
  cfg.R = R;
  cfg.Qy = Qy;
  cfg.gen = gen;
  cfg.gen_a = gen.leading(reference_frequencies);
  const auto p = char_poly(gen);
  cfg.Gx = MatrixFractionFilter<double>::identity(plant.n(), p);
  cfg.Gu = MatrixFractionFilter<double>::identity(plant.m(), p);
  cfg.terminal = build_terminal_cost(cfg.Gx, cfg.Gu, Q, R);
  cfg.Pa = build_Pa(cfg.gen_a, plant.p(), pa_weight);
  cfg.sigma = VectorXd::Constant(constraints.rows(), sigma);
  return cfg;
}

PredictionHistory PredictionHistory::zeros(const MPCConfig& cfg) {
  PredictionHistory h;
  h.x.assign(static_cast<std::size_t>(cfg.nn()), VectorXd::Zero(cfg.n()));
  h.y.assign(static_cast<std::size_t>(cfg.nn()), VectorXd::Zero(cfg.p()));
  h.u.assign(static_cast<std::size_t>(cfg.nn()), VectorXd::Zero(cfg.m()));
  h.ex.assign(static_cast<std::size_t>(cfg.ndx() + 1), VectorXd::Zero(cfg.n()));
  h.eu.assign(static_cast<std::size_t>(cfg.ndu()), VectorXd::Zero(cfg.m()));
  h.x_filtered = VectorXd::Zero(cfg.n());
  return h;
}

VectorXd PredictionHistory::stacked() const {
  Index total = 0;
  for (const auto* part : {&x, &y, &u, &ex, &eu})
    for (const auto& v : *part) total += v.size();
  VectorXd out(total);
  Index off = 0;
  for (const auto* part : {&x, &y, &u, &ex, &eu})
    for (const auto& v : *part) {
      out.segment(off, v.size()) = v;
      off += v.size();
    }
  return out;
}

PredictionHistory PredictionHistory::unstack(const MPCConfig& cfg, const VectorXd& stacked_h) {
  PredictionHistory h = zeros(cfg);
  Index off = 0;
  for (auto* part : {&h.x, &h.y, &h.u, &h.ex, &h.eu})
    for (auto& v : *part) {
      if (off + v.size() > stacked_h.size()) throw std::invalid_argument("PredictionHistory::unstack: vector too short");
      v = stacked_h.segment(off, v.size());
      off += v.size();
    }
  if (off != stacked_h.size()) throw std::invalid_argument("PredictionHistory::unstack: vector too long");
  return h;
}

MPCProblem build_basic_qp(const MPCConfig& cfg, const PredictionHistory& h) {
  check_history(cfg, h);
  const VariableLayout L = make_layout(cfg, false);
  const Signals s(cfg, h, L);
  Assembler as(L.size);
  trajectory_rows(cfg, h, s, as);
  for (Index k = 0; k <= cfg.N; ++k) {
    as.cost(cfg.Q, s.ex(k));
    as.cost(cfg.R, s.eu(k));
    as.cost(cfg.Qy, s.y(k));
  }
  MPCProblem out = as.finish(L);
  out.qp.names = variable_names(L);
  return out;
}

MPCProblem build_artref_qp(const MPCConfig& cfg, const PredictionHistory& h) {
  check_history(cfg, h);
  VariableLayout L = make_layout(cfg, true);
  const auto groups = reference_groups(cfg, L);
  L.aux_count = soc_aux_count(groups);
  L.size = L.aux + L.aux_count;

  const Signals s(cfg, h, L);
  Assembler as(L.size);
  trajectory_rows(cfg, h, s, as);

  const Index n = L.n, m = L.m, p = L.p, N = L.N, nn = cfg.nn();
  for (Index k = std::max<Index>(N - nn + 1, 0); k <= N; ++k) {
    as.equal_zero(s.x(k) - reference_signal(cfg.gen, n, L.theta_x, k));
    as.equal_zero(s.u(k) - reference_signal(cfg.gen, m, L.theta_u, k));
    as.equal_zero(s.y(k) - reference_signal(cfg.gen_a, p, L.theta_y, k));
  }
  as.equal_zero(s.Qx_ex(N));
  as.equal_zero(s.Qu_eu(N));

  const auto soc = soc_rows(groups, cfg.constraints.cbar - cfg.sigma, cfg.soc_facets);
  // The budget row of every state constraint is softened along with the trajectory rows.
  std::vector<bool> soc_state(static_cast<std::size_t>(soc.A.rows()), false);
  for (Index i = 0, row = 0; i < cfg.constraints.rows(); ++i) {
    soc_state[static_cast<std::size_t>(row)] = cfg.constraints.is_state_row(i);
    row += 1 + cfg.soc_facets * static_cast<Index>(groups[static_cast<std::size_t>(i)].pairs.size());
  }
  as.raw_inequalities(soc.A, soc.b, std::move(soc_state));

  as.cost(cfg.Pa, variable(L.theta_y, p * cfg.gen_a.dimension()));
  for (Index k = 0; k < N; ++k) {
    as.cost(cfg.Q, s.ex(k));
    as.cost(cfg.R, s.eu(k));
    as.cost(cfg.Qy, s.y(k) - reference_signal(cfg.gen_a, p, L.theta_y, k));
  }
  // V_N on (e~_N, e~_{N-1}, ...), the companion-state ordering.
  auto stacked = [&](auto&& sig, Index depth, Index dim) {
    Affine a{{}, VectorXd::Zero(depth * dim)};
    for (Index i = 0; i < depth; ++i) {
      MatrixXd lift = MatrixXd::Zero(depth * dim, dim);
      lift.block(i * dim, 0, dim, dim).setIdentity();
      a = a + lift * sig(N - i);
    }
    return a;
  };
  if (cfg.ndx() > 0) as.cost(cfg.terminal.Px, stacked([&](Index k) { return s.ex(k); }, cfg.ndx(), n));
  if (cfg.ndu() > 0) as.cost(cfg.terminal.Pu, stacked([&](Index k) { return s.eu(k); }, cfg.ndu(), m));

  MPCProblem out = as.finish(L);
  out.qp.names = variable_names(L);
  return out;
}

MPCProblem build_qp(const MPCConfig& cfg, const PredictionHistory& h) {
  return cfg.variant == MPCVariant::basic ? build_basic_qp(cfg, h) : build_artref_qp(cfg, h);
}

MPCProblem soften_state_rows(const MPCProblem& problem, const MPCConfig& cfg) {
  MPCProblem out = problem;
  QPProblem& qp = out.qp;
  const Index d = qp.dim(), s = d;
  out.layout.slack = s;
  out.layout.size = d + 1;

  qp.H.conservativeResize(d + 1, d + 1);
  qp.H.row(s).setZero();
  qp.H.col(s).setZero();
  qp.H(s, s) = 2.0 * 1e6 * cfg.Qy.cwiseAbs().maxCoeff();
  qp.f.conservativeResize(d + 1);
  qp.f(s) = 0.0;
  qp.Aeq.conservativeResize(qp.Aeq.rows(), d + 1);
  qp.Aeq.col(s).setZero();

  const Index r = qp.Aineq.rows();
  qp.Aineq.conservativeResize(r + 1, d + 1);
  qp.Aineq.col(s).setZero();
  qp.Aineq.row(r).setZero();
  qp.Aineq(r, s) = -1.0;
  qp.bineq.conservativeResize(r + 1);
  qp.bineq(r) = 0.0;
  for (Index i = 0; i < r; ++i)
    if (out.state_row[static_cast<std::size_t>(i)]) qp.Aineq(i, s) = -1.0;
  out.state_row.push_back(false);
  if (!qp.names.empty()) qp.names.push_back("slack");
  return out;
}

double objective_value(const MPCProblem& problem, const VectorXd& v) { return problem.qp.objective(v) + problem.constant; }

std::pair<double, double> constraint_residuals(const QPProblem& qp, const VectorXd& v) {
  double eq = 0.0, in = 0.0;
  if (qp.equalities() > 0) eq = (qp.Aeq * v - qp.beq).cwiseAbs().maxCoeff();
  if (qp.inequalities() > 0) in = std::max(0.0, (qp.Aineq * v - qp.bineq).maxCoeff());
  return {eq, in};
}

Plan decode(const MPCConfig& cfg, const MPCProblem& problem, const PredictionHistory& h, const VectorXd& v) {
  const auto& L = problem.layout;
  Plan plan;
  for (Index k = 0; k <= L.N; ++k) {
    plan.ex.push_back(k == 0 ? h.ex[0] : segment(v, L.ex_col(k), L.n));
    plan.x.push_back(k == 0 ? h.x[0] : segment(v, L.x_col(k), L.n));
    plan.y.push_back(k == 0 ? h.y[0] : segment(v, L.y_col(k), L.p));
    plan.eu.push_back(segment(v, L.eu_col(k), L.m));
    plan.u.push_back(segment(v, L.u_col(k), L.m));
  }
  plan.theta.theta_x = v.segment(L.theta_x, L.theta_u - L.theta_x);
  plan.theta.theta_u = v.segment(L.theta_u, L.theta_y - L.theta_u);
  plan.theta.theta_y = v.segment(L.theta_y, L.aux - L.theta_y);
  (void)cfg;
  return plan;
}

double stage_cost(const MPCConfig& cfg, const VectorXd& ex, const VectorXd& eu, const VectorXd& y, const VectorXd& ya) {
  const VectorXd dy = y - ya;
  return ex.dot(cfg.Q * ex) + eu.dot(cfg.R * eu) + dy.dot(cfg.Qy * dy);
}

VectorXd shifted_candidate(const MPCConfig& cfg, const VariableLayout& L, const VectorXd& prev) {
  const Index n = L.n, m = L.m, p = L.p, N = L.N;
  const auto& pc = cfg.Gx.denominator();
  VectorXd c = VectorXd::Zero(L.size);

  for (Index k = 1; k < N; ++k) {
    c.segment(L.ex_col(k), n) = prev.segment(L.ex_col(k + 1), n);
    c.segment(L.x_col(k), n) = prev.segment(L.x_col(k + 1), n);
    c.segment(L.y_col(k), p) = prev.segment(L.y_col(k + 1), p);
  }
  for (Index k = 0; k < N; ++k) {
    c.segment(L.eu_col(k), m) = prev.segment(L.eu_col(k + 1), m);
    c.segment(L.u_col(k), m) = prev.segment(L.u_col(k + 1), m);
  }

  // Continue Q(z) e~ = 0 for the appended sample.
  VectorXd acc = VectorXd::Zero(n);
  for (Index j = 1; j <= cfg.ndx(); ++j) acc += cfg.Gx.Q(j) * prev.segment(L.ex_col(N + 1 - j), n);
  c.segment(L.ex_col(N), n) = -cfg.Gx.Q0_inverse() * acc;
  VectorXd accu = VectorXd::Zero(m);
  for (Index j = 1; j <= cfg.ndu(); ++j) accu += cfg.Gu.Q(j) * prev.segment(L.eu_col(N + 1 - j), m);
  c.segment(L.eu_col(N), m) = -cfg.Gu.Q0_inverse() * accu;

  // x_N, u_N, y_N from the recovery recursions.
  VectorXd qx = VectorXd::Zero(n), qu = VectorXd::Zero(m);
  for (Index i = 0; i <= cfg.ndx(); ++i) qx += cfg.Gx.Q(i) * c.segment(L.ex_col(N - i), n);
  for (Index i = 0; i <= cfg.ndu(); ++i) qu += cfg.Gu.Q(i) * c.segment(L.eu_col(N - i), m);
  VectorXd xN = qx, uN = qu, yN = cfg.plant.C * qx;
  for (Index i = 1; i <= pc.degree(); ++i) {
    xN -= pc[i] * c.segment(L.x_col(N - i), n);
    uN -= pc[i] * c.segment(L.u_col(N - i), m);
    yN -= pc[i] * c.segment(L.y_col(N - i), p);
  }
  c.segment(L.x_col(N), n) = xN / pc[0];
  c.segment(L.u_col(N), m) = uN / pc[0];
  c.segment(L.y_col(N), p) = yN / pc[0];

  if (L.aux > L.theta_x) {
    const Index d = cfg.gen.dimension(), da = cfg.gen_a.dimension();
    c.segment(L.theta_x, n * d) = blkdiag(cfg.gen.S(), n) * prev.segment(L.theta_x, n * d);
    c.segment(L.theta_u, m * d) = blkdiag(cfg.gen.S(), m) * prev.segment(L.theta_u, m * d);
    c.segment(L.theta_y, p * da) = blkdiag(cfg.gen_a.S(), p) * prev.segment(L.theta_y, p * da);
    if (L.aux_count > 0) {
      const auto groups = reference_groups(cfg, L);
      c.segment(L.aux, L.aux_count) = soc_aux_values(groups, c.head(L.aux), cfg.soc_facets);
    }
  }
  return c;
}

PredictedTrajectory predict(const MPCConfig& cfg, const PredictionHistory& h, const std::vector<VectorXd>& eu_future) {
  check_history(cfg, h);
  const Index H = static_cast<Index>(eu_future.size());
  const Index nn = cfg.nn(), ndx = cfg.ndx(), ndu = cfg.ndu();
  const auto& pc = cfg.Gx.denominator();
  const auto& sys = cfg.plant;
  // Index shift so that prediction index k maps to storage k + off.
  const Index off = std::max({nn, ndx, ndu}) + 1;
  auto alloc = [&](Index dim) { return std::vector<VectorXd>(static_cast<std::size_t>(off + H + 1), VectorXd::Zero(dim)); };
  auto ex = alloc(cfg.n()), eu = alloc(cfg.m()), x = alloc(cfg.n()), y = alloc(cfg.p()), u = alloc(cfg.m());
  auto at = [&](std::vector<VectorXd>& v, Index k) -> VectorXd& { return v[static_cast<std::size_t>(k + off)]; };
  for (Index i = 0; i <= ndx; ++i) at(ex, -i) = h.ex[static_cast<std::size_t>(i)];
  for (Index i = 1; i <= ndu; ++i) at(eu, -i) = h.eu[static_cast<std::size_t>(i - 1)];
  for (Index i = 0; i < nn; ++i) {
    at(x, -i) = h.x[static_cast<std::size_t>(i)];
    at(y, -i) = h.y[static_cast<std::size_t>(i)];
    at(u, -i - 1) = h.u[static_cast<std::size_t>(i)];
  }
  for (Index k = 0; k < H; ++k) at(eu, k) = eu_future[static_cast<std::size_t>(k)];

  auto Qx_ex = [&](Index k) {
    VectorXd a = cfg.Gx.Q(0) * at(ex, k);
    for (Index i = 1; i <= ndx; ++i) a += cfg.Gx.Q(i) * at(ex, k - i);
    return a;
  };
  auto Qu_eu = [&](Index k) {
    VectorXd a = cfg.Gu.Q(0) * at(eu, k);
    for (Index i = 1; i <= ndu; ++i) a += cfg.Gu.Q(i) * at(eu, k - i);
    return a;
  };
  auto recover = [&](std::vector<VectorXd>& s, Index k, VectorXd rhs) {
    for (Index i = 1; i <= pc.degree(); ++i) rhs -= pc[i] * at(s, k - i);
    at(s, k) = rhs / pc[0];
  };

  for (Index k = 0; k <= H; ++k) {
    if (k > 0) {
      VectorXd rhs = sys.A * Qx_ex(k - 1) + sys.B * Qu_eu(k - 1);
      for (Index i = 1; i <= ndx; ++i) rhs -= cfg.Gx.Q(i) * at(ex, k - i);
      at(ex, k) = cfg.Gx.Q0_inverse() * rhs;
      recover(x, k, Qx_ex(k));
      recover(y, k, sys.C * Qx_ex(k));
    }
    if (k < H) recover(u, k, Qu_eu(k));
  }

  PredictedTrajectory out;
  for (Index k = 0; k <= H; ++k) {
    out.ex.push_back(at(ex, k));
    out.x.push_back(at(x, k));
    out.y.push_back(at(y, k));
    if (k < H) out.u.push_back(at(u, k));
  }
  return out;
}

Controller::Controller(MPCConfig cfg) : cfg_(std::move(cfg)), solver_(cfg_.qp) {
  cfg_.validate();
  x_filter_ = FilterState<double>(cfg_.Gx);
  u_filter_ = FilterState<double>(cfg_.Gu);
  y_hist_ = History<double>(cfg_.nn(), cfg_.p());
  ex_hist_ = History<double>(cfg_.ndx() + 1, cfg_.n());
  u_prev_ = VectorXd::Zero(cfg_.m());
}

void Controller::advance_measurement(const VectorXd& x_meas, const VectorXd& y_meas) {
  if (x_meas.size() != cfg_.n() || y_meas.size() != cfg_.p())
    throw std::invalid_argument("Controller::step: measurement dimension mismatch");
  if (!started_) {
    // No special initialization is needed: constant copies of the first sample.
    x_filter_.raw.fill(x_meas);
    y_hist_.fill(y_meas);
    x_filtered_ = x_meas;
    started_ = true;
    since_break_ = 0;
  }
  const VectorXd ex = inverse_filter_step(cfg_.Gx, x_filter_, x_meas);
  ex_hist_.push(ex);
  y_hist_.push(y_meas);
}

PredictionHistory Controller::history() const {
  PredictionHistory h;
  for (Index i = 0; i < cfg_.nn(); ++i) {
    h.x.push_back(x_filter_.raw[i]);
    h.y.push_back(y_hist_[i]);
    h.u.push_back(u_filter_.raw[i]);
  }
  for (Index i = 0; i <= cfg_.ndx(); ++i) h.ex.push_back(ex_hist_[i]);
  for (Index i = 0; i < cfg_.ndu(); ++i) h.eu.push_back(u_filter_.filtered[i]);
  h.x_filtered = x_filtered_;
  return h;
}

StepResult Controller::step(const VectorXd& x_meas, const VectorXd& y_meas) {
  advance_measurement(x_meas, y_meas);
  const PredictionHistory h = history();

  StepResult res;
  res.trusted = trusted();
  res.ex = h.ex[0];

  const auto t0 = std::chrono::steady_clock::now();
  MPCProblem problem = build_qp(cfg_, h);
  const VectorXd* warm = candidate_.size() == problem.qp.dim() ? &candidate_ : nullptr;
  QPSolution sol = solver_.solve(problem.qp, warm);
  res.status = sol.status;
  res.feasible = sol.optimal();

  if (!sol.optimal() && cfg_.fallback == FallbackPolicy::soften_state) {
    MPCProblem soft = soften_state_rows(problem, cfg_);
    QPSolution ssol = solve_softened(solver_, soft);
    if (ssol.optimal()) {
      problem = std::move(soft);
      sol = std::move(ssol);
      res.slack = std::max(0.0, sol.x(problem.layout.slack));
    }
  }
  res.solve_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

  if (sol.optimal()) {
    const Plan plan = decode(cfg_, problem, h, sol.x);
    res.u = plan.u[0];
    res.objective = objective_value(problem, sol.x);
    res.theta = plan.theta;
    res.kkt = sol.kkt.max();
    const VectorXd ya = cfg_.variant == MPCVariant::artificial_reference
                            ? reference_at(cfg_.gen_a, plan.theta.theta_y, 0)
                            : VectorXd::Zero(cfg_.p());
    res.stage_cost = stage_cost(cfg_, plan.ex[0], plan.eu[0], plan.y[0], ya);
    last_solution_ = sol.x;
  } else {
    res.u = u_prev_;
    res.feasible = false;
    last_solution_.resize(0);
  }

  res.eu = inverse_filter_step(cfg_.Gu, u_filter_, res.u);
  if (cfg_.lowpass_alpha > 0) x_filtered_ = (1 - cfg_.lowpass_alpha) * x_filtered_ + cfg_.lowpass_alpha * x_meas;
  u_prev_ = res.u;
  candidate_ = res.feasible ? shifted_candidate(cfg_, problem.layout, sol.x) : VectorXd();
  last_problem_ = std::move(problem);
  last_history_ = h;
  ++since_break_;
  return res;
}

LinearGain unconstrained_gain(const MPCConfig& cfg) {
  cfg.validate();
  const PredictionHistory h0 = PredictionHistory::zeros(cfg);
  const Index dim = h0.stacked().size();
  QPSolver solver(cfg.qp);
  auto solve = [&](const PredictionHistory& h) {
    MPCProblem prob = build_qp(cfg, h);
    prob.qp.Aineq.resize(0, prob.qp.dim());
    prob.qp.bineq.resize(0);
    const QPSolution sol = solver.solve(prob.qp);
    if (!sol.optimal()) throw std::runtime_error("unconstrained_gain: singular KKT system");
    return VectorXd(sol.x.segment(prob.layout.u_col(0), cfg.m()));
  };
  LinearGain g;
  g.offset = solve(h0);
  g.K.resize(cfg.m(), dim);
  for (Index j = 0; j < dim; ++j) {
    PredictionHistory h = PredictionHistory::unstack(cfg, VectorXd::Unit(dim, j));
    h.x_filtered = h0.x_filtered;
    g.K.col(j) = solve(h) - g.offset;
  }
  return g;
}

}  // namespace immpc
