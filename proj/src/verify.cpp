#include "immpc/verify.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace immpc {

bool SuiteReport::passed() const {
  return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

CheckResult& SuiteReport::add_bound(std::string name, double value, double tolerance, std::string detail) {
  checks.push_back({std::move(name), value, tolerance, value <= tolerance, std::move(detail)});
  return checks.back();
}

std::string to_json(const SuiteReport& r) {
  nlohmann::ordered_json j;
  j["suite"] = r.suite;
  j["passed"] = r.passed();
  j["checks"] = nlohmann::ordered_json::array();
  for (const auto& c : r.checks) {
    nlohmann::ordered_json e;
    e["name"] = c.name;
    e["value"] = c.value;
    e["tolerance"] = c.tolerance;
    e["passed"] = c.passed;
    if (!c.detail.empty()) e["detail"] = c.detail;
    j["checks"].push_back(e);
  }
  return j.dump(2);
}

namespace {

MatrixXd randn(std::mt19937_64& rng, Index r, Index c) {
  std::normal_distribution<double> nd;
  MatrixXd M(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) M(i, j) = nd(rng);
  return M;
}

Index uniform_index(std::mt19937_64& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

ConstraintPolytope<double> wide_box(Index n, Index m) {
  return ConstraintPolytope<double>::box(VectorXd::Constant(n, -1e6), VectorXd::Constant(n, 1e6),
                                         VectorXd::Constant(m, -1e6), VectorXd::Constant(m, 1e6));
}

MatrixFractionFilter<double> random_filter(std::mt19937_64& rng, Index dim, const Polynomial<double>& p) {
  if (std::bernoulli_distribution(0.5)(rng)) return MatrixFractionFilter<double>::identity(dim, p);
  for (;;) {
    try {
      return MatrixFractionFilter<double>({MatrixXd::Identity(dim, dim), 0.4 * randn(rng, dim, dim) / std::sqrt(double(dim))},
                                          p);
    } catch (const std::invalid_argument&) {
    }
  }
}

/// Affine map z -> M z + c over the condensed decision vector.
struct Lin {
  MatrixXd M;
  VectorXd c;
};

}  // namespace

PredictionInstance random_prediction_instance(std::mt19937_64& rng) {
  const Index n = uniform_index(rng, 1, 6), m = uniform_index(rng, 1, 3), p = uniform_index(rng, 1, 3);
  const Index q = uniform_index(rng, 1, 3);
  const double omega = std::uniform_real_distribution<double>(0.2, 2.8)(rng);
  const SignalGenerator<double> gen = q == 1   ? SignalGenerator<double>()
                                      : q == 2 ? SignalGenerator<double>({omega}, false)
                                               : SignalGenerator<double>({omega}, true);

  PredictionInstance inst;
  auto& sys = inst.cfg.plant;
  sys.A = randn(rng, n, n);
  const double rho = spectral_radius(sys.A);
  sys.A *= std::uniform_real_distribution<double>(0.3, 1.0)(rng) / std::max(rho, 1e-3);
  sys.B = randn(rng, n, m);
  sys.C = randn(rng, p, n);

  inst.dist.S = gen.S();
  inst.dist.E = randn(rng, n, q);
  inst.dist.F = randn(rng, p, q);
  inst.dist.w0 = randn(rng, q, 1);

  auto& cfg = inst.cfg;
  cfg.constraints = wide_box(n, m);
  cfg.N = 10;
  cfg.Q = MatrixXd::Identity(n, n);
  cfg.R = MatrixXd::Identity(m, m);
  cfg.Qy = MatrixXd::Identity(p, p);
  cfg.gen = gen;
  cfg.gen_a = gen;
  const auto pz = char_poly(gen);
  cfg.Gx = random_filter(rng, n, pz);
  cfg.Gu = random_filter(rng, m, pz);
  cfg.variant = MPCVariant::basic;
  return inst;
}

double prediction_rollout_residual(const PredictionInstance& inst, std::mt19937_64& rng, Index horizon) {
  const auto& cfg = inst.cfg;
  const auto& sys = cfg.plant;
  const auto& dist = inst.dist;
  const Index nn = cfg.nn(), t = nn;

  std::vector<VectorXd> xs, ys, us, exs, eus, ws;
  FilterState<double> fx(cfg.Gx), fu(cfg.Gu);
  VectorXd x = randn(rng, cfg.n(), 1), w = dist.w0;
  for (Index k = 0; k <= t; ++k) {
    xs.push_back(x);
    ys.push_back(sys.C * x + dist.F * w);
    ws.push_back(w);
    exs.push_back(inverse_filter_step(cfg.Gx, fx, x));
    if (k == t) break;
    const VectorXd u = randn(rng, cfg.m(), 1);
    us.push_back(u);
    eus.push_back(inverse_filter_step(cfg.Gu, fu, u));
    x = sys.A * x + sys.B * u + dist.E * w;
    w = dist.S * w;
  }

  auto past = [](const std::vector<VectorXd>& v, Index i, Index dim) {
    return i >= 0 ? v[static_cast<std::size_t>(i)] : VectorXd(VectorXd::Zero(dim));
  };
  PredictionHistory h;
  for (Index i = 0; i < nn; ++i) {
    h.x.push_back(xs[static_cast<std::size_t>(t - i)]);
    h.y.push_back(ys[static_cast<std::size_t>(t - i)]);
    h.u.push_back(us[static_cast<std::size_t>(t - 1 - i)]);
  }
  for (Index i = 0; i <= cfg.ndx(); ++i) h.ex.push_back(past(exs, t - i, cfg.n()));
  for (Index i = 0; i < cfg.ndu(); ++i) h.eu.push_back(past(eus, t - 1 - i, cfg.m()));

  std::vector<VectorXd> eu_future;
  for (Index k = 0; k < horizon; ++k) eu_future.push_back(randn(rng, cfg.m(), 1));
  const PredictedTrajectory pred = predict(cfg, h, eu_future);

  double err = 0, scale = 1;
  x = xs.back();
  w = ws.back();
  for (Index k = 0; k <= horizon; ++k) {
    const VectorXd y = sys.C * x + dist.F * w;
    const auto kk = static_cast<std::size_t>(k);
    err = std::max({err, (x - pred.x[kk]).cwiseAbs().maxCoeff(), (y - pred.y[kk]).cwiseAbs().maxCoeff()});
    scale = std::max({scale, x.cwiseAbs().maxCoeff(), y.cwiseAbs().maxCoeff()});
    if (k == horizon) break;
    x = sys.A * x + sys.B * pred.u[kk] + dist.E * w;
    w = dist.S * w;
  }
  return err / scale;
}

SuiteReport suite_theorem1(std::uint64_t seed, int instances) {
  SuiteReport r;
  r.suite = "theorem1";
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (int i = 0; i < instances; ++i) {
    const PredictionInstance inst = random_prediction_instance(rng);
    const double res = prediction_rollout_residual(inst, rng);
    r.add_bound("instance " + std::to_string(i), res, 1e-9,
                "n=" + std::to_string(inst.cfg.n()) + " m=" + std::to_string(inst.cfg.m()) +
                    " p=" + std::to_string(inst.cfg.p()) + " q=" + std::to_string(inst.dist.q()) +
                    " nd=" + std::to_string(inst.cfg.ndx()) + "/" + std::to_string(inst.cfg.ndu()));
    worst = std::max(worst, res);
  }
  r.add_bound("max residual", worst, 1e-9);
  return r;
}

Scenario velocity_scenario(Index steps) {
  Scenario sc;
  sc.name = "velocity_form";
  sc.plant.A = (MatrixXd(2, 2) << 0.9, 0.2, 0.0, 0.7).finished();
  sc.plant.B = (MatrixXd(2, 1) << 0.0, 1.0).finished();
  sc.plant.C = (MatrixXd(1, 2) << 1.0, 0.0).finished();
  auto& d = sc.disturbance;
  // w = (1, r): constant load on both states, reference r on the output.
  d.S = MatrixXd::Identity(2, 2);
  d.E = (MatrixXd(2, 2) << 0.05, 0.0, -0.05, 0.0).finished();
  d.F = (MatrixXd(1, 2) << 0.0, -1.0).finished();
  d.w0 = (VectorXd(2) << 1.0, 1.0).finished();
  sc.x0 = VectorXd::Zero(2);
  sc.steps = steps;
  if (steps > 50) sc.schedule.push_back({50, {{1, -0.5}}});

  const auto box = ConstraintPolytope<double>::box(VectorXd::Constant(2, -2.0), VectorXd::Constant(2, 2.0),
                                                   VectorXd::Constant(1, -0.5), VectorXd::Constant(1, 0.5));
  sc.controller = make_config(sc.plant, box, 15, 0.5 * MatrixXd::Identity(2, 2), 0.5 * MatrixXd::Identity(1, 1),
                              5 * MatrixXd::Identity(1, 1), 5.0, 0.05, SignalGenerator<double>(), 0);
  sc.controller.variant = MPCVariant::basic;
  sc.controller.fallback = FallbackPolicy::hold;
  return sc;
}

VectorXd velocity_mpc_u0(const MPCConfig& cfg, const VectorXd& x, const VectorXd& x_prev, const VectorXd& y,
                         const VectorXd& u_prev, double* kkt) {
  const auto& sys = cfg.plant;
  const Index n = cfg.n(), m = cfg.m(), N = cfg.N, dim = m * (N + 1);
  auto du = [&](Index k) {
    Lin l{MatrixXd::Zero(m, dim), VectorXd::Zero(m)};
    l.M.block(0, k * m, m, m).setIdentity();
    return l;
  };

  QPProblem qp;
  qp.H = MatrixXd::Zero(dim, dim);
  qp.f = VectorXd::Zero(dim);
  auto cost = [&](const MatrixXd& W, const Lin& l) {
    qp.H += 2 * l.M.transpose() * W * l.M;
    qp.f += 2 * l.M.transpose() * W * l.c;
  };
  std::vector<RowVectorXd> rows;
  std::vector<double> rhs;
  const auto& poly = cfg.constraints;

  Lin dx{MatrixXd::Zero(n, dim), x - x_prev};
  Lin xk{MatrixXd::Zero(n, dim), x};
  Lin uk{MatrixXd::Zero(m, dim), u_prev};
  for (Index k = 0; k <= N; ++k) {
    if (k > 0) {
      const Lin d = du(k - 1);
      dx = Lin{sys.A * dx.M + sys.B * d.M, sys.A * dx.c + sys.B * d.c};
      xk = Lin{xk.M + dx.M, xk.c + dx.c};
    }
    const Lin d = du(k);
    uk = Lin{uk.M + d.M, uk.c + d.c};
    const Lin yk{sys.C * (xk.M), y + sys.C * (xk.c - x)};
    cost(cfg.Q, dx);
    cost(cfg.R, d);
    cost(cfg.Qy, yk);
    for (Index i = 0; i < poly.rows(); ++i) {
      const RowVectorXd a = poly.Cbar.row(i) * xk.M + poly.Dbar.row(i) * uk.M;
      if (a.cwiseAbs().maxCoeff() == 0) continue;
      rows.push_back(a);
      rhs.push_back(poly.cbar(i) - poly.Cbar.row(i).dot(xk.c) - poly.Dbar.row(i).dot(uk.c));
    }
  }
  qp.Aeq.resize(0, dim);
  qp.beq.resize(0);
  qp.Aineq.resize(static_cast<Index>(rows.size()), dim);
  qp.bineq.resize(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    qp.Aineq.row(static_cast<Index>(i)) = rows[i];
    qp.bineq(static_cast<Index>(i)) = rhs[i];
  }
  const QPSolution sol = solve_qp(qp, cfg.qp);
  if (!sol.optimal()) throw std::runtime_error("velocity-form MPC: QP not solved");
  if (kkt) *kkt = sol.kkt.max();
  return u_prev + sol.x.head(m);
}

VelocityComparison velocity_equivalence(Index steps) {
  const Scenario sc = velocity_scenario(steps);
  VelocityComparison out;
  VectorXd x_prev, u_prev = VectorXd::Zero(sc.plant.m());
  const auto& poly = sc.controller.constraints;
  run(sc, [&](Index, const Controller& c, const StepResult& res) {
    const auto& h = c.last_history();
    const VectorXd& x = h.x[0];
    if (x_prev.size() == 0) x_prev = x;
    double kkt = 0;
    const VectorXd u = velocity_mpc_u0(c.config(), x, x_prev, h.y[0], u_prev, &kkt);
    out.max_difference = std::max(out.max_difference, (u - res.u).cwiseAbs().maxCoeff());
    out.max_kkt = std::max({out.max_kkt, kkt, res.kkt});
    if ((poly.Dbar * res.u - poly.cbar).maxCoeff() > -1e-7) ++out.constrained_steps;
    ++out.steps;
    x_prev = x;
    u_prev = res.u;
  });
  return out;
}

SuiteReport suite_velocity() {
  SuiteReport r;
  r.suite = "velocity";
  const VelocityComparison v = velocity_equivalence(100);
  r.add_bound("max |u0 - u0_velocity|", v.max_difference, 1e-8, std::to_string(v.steps) + " steps");
  r.add_bound("input bound active on some step", v.constrained_steps > 0 ? 0.0 : 1.0, 0.0,
              std::to_string(v.constrained_steps) + " constrained steps");
  r.add_bound("max KKT residual", v.max_kkt, 1e-7);
  return r;
}

FeasibilityTrace trace_feasibility(const Scenario& sc) {
  FeasibilityTrace tr;
  const MPCConfig& cfg = sc.controller;
  struct Previous {
    bool usable = false;
    VariableLayout layout;
    VectorXd solution;
    double objective = 0, stage = 0;
  } prev;

  const auto t0 = std::chrono::steady_clock::now();
  tr.log = run(sc, [&](Index, const Controller& c, const StepResult& res) {
    if (res.trusted && prev.usable) {
      const MPCProblem problem = build_qp(cfg, c.last_history());
      const VectorXd cand = shifted_candidate(cfg, prev.layout, prev.solution);
      const auto [eq, ineq] = constraint_residuals(problem.qp, cand);
      tr.max_candidate_eq = std::max(tr.max_candidate_eq, eq);
      tr.max_candidate_ineq = std::max(tr.max_candidate_ineq, ineq);
      ++tr.candidate_checks;
      if (res.feasible) {
        tr.max_decrease_excess = std::max(tr.max_decrease_excess, res.objective - prev.objective + prev.stage);
        ++tr.decrease_checks;
      }
    }
    prev.usable = res.feasible;
    if (res.feasible) {
      prev.layout = c.last_problem()->layout;
      prev.solution = c.last_solution();
      prev.objective = res.objective;
      prev.stage = res.stage_cost;
    }
  });
  tr.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const ReferenceOracle oracle(sc);
  const Metrics m = metrics(tr.log, sc, [&](Index t) { return oracle.y_star(t); }, 1e-2);
  const auto& last = tr.log.records.back();
  tr.final_tracking = (last.y - oracle.y_star(last.t)).norm();
  tr.max_kkt = m.max_kkt;
  for (const auto& r : tr.log.records)
    if (r.feasible) tr.max_violation = std::max(tr.max_violation, cfg.constraints.violation(r.x, r.u));
  return tr;
}

SuiteReport suite_theorem2() {
  SuiteReport r;
  r.suite = "theorem2";
  const FeasibilityTrace tr = trace_feasibility(four_tank_sine());
  r.add_bound("candidate equality residual", tr.max_candidate_eq, 1e-7,
              std::to_string(tr.candidate_checks) + " steps");
  r.add_bound("candidate inequality residual", tr.max_candidate_ineq, 1e-7);
  r.add_bound("cost decrease J(t+1) - J(t) + l(t)", tr.max_decrease_excess, 1e-5,
              std::to_string(tr.decrease_checks) + " steps");
  r.add_bound("||y(T) - y*(T)||", tr.final_tracking, 1e-2);
  r.add_bound("max KKT residual", tr.max_kkt, 1e-7);
  return r;
}

VectorXd unconstrained_u0(const MPCConfig& cfg, const PredictionHistory& h) {
  MPCProblem prob = build_qp(cfg, h);
  prob.qp.Aineq.resize(0, prob.qp.dim());
  prob.qp.bineq.resize(0);
  const QPSolution sol = solve_qp(prob.qp, cfg.qp);
  if (!sol.optimal()) throw std::runtime_error("unconstrained problem not solved");
  return sol.x.segment(prob.layout.u_col(0), cfg.m());
}

MPCConfig scalar_gain_config() {
  DiscreteLTI<double> plant{MatrixXd::Constant(1, 1, 0.9), MatrixXd::Constant(1, 1, 0.5), MatrixXd::Ones(1, 1)};
  MPCConfig cfg = make_config(plant, wide_box(1, 1), 10, 0.5 * MatrixXd::Identity(1, 1), 0.5 * MatrixXd::Identity(1, 1),
                              5 * MatrixXd::Identity(1, 1), 5.0, 0.05, SignalGenerator<double>(), 0);
  cfg.variant = MPCVariant::basic;
  return cfg;
}

double gain_superposition_residual(const MPCConfig& cfg, std::mt19937_64& rng, int pairs) {
  const LinearGain g = unconstrained_gain(cfg);
  const PredictionHistory h0 = PredictionHistory::zeros(cfg);
  const Index dim = h0.stacked().size();
  const VectorXd u00 = unconstrained_u0(cfg, h0);
  auto hist = [&](const VectorXd& v) {
    PredictionHistory h = PredictionHistory::unstack(cfg, v);
    h.x_filtered = h0.x_filtered;
    return h;
  };
  double worst = (u00 - g.offset).cwiseAbs().maxCoeff();
  for (int i = 0; i < pairs; ++i) {
    const VectorXd a = randn(rng, dim, 1), b = randn(rng, dim, 1);
    const VectorXd ua = unconstrained_u0(cfg, hist(a)), ub = unconstrained_u0(cfg, hist(b));
    const VectorXd uab = unconstrained_u0(cfg, hist(a + b));
    worst = std::max({worst, (uab - ua - ub + u00).cwiseAbs().maxCoeff(),
                      (ua - g.K * a - g.offset).cwiseAbs().maxCoeff()});
  }
  return worst;
}

double static_gain_rejection(Index steps) {
  const MPCConfig cfg = scalar_gain_config();
  const LinearGain g = unconstrained_gain(cfg);
  FilterState<double> fx(cfg.Gx), fu(cfg.Gu);
  History<double> yh(cfg.nn(), cfg.p()), exh(cfg.ndx() + 1, cfg.n());
  const double a = 0.9, b = 0.5, load = 0.3, offset = 0.5;
  double x = 0, y = 0;
  for (Index t = 0; t < steps; ++t) {
    y = x - offset;
    const VectorXd xv = VectorXd::Constant(1, x), yv = VectorXd::Constant(1, y);
    if (t == 0) {
      fx.raw.fill(xv);
      yh.fill(yv);
    }
    exh.push(inverse_filter_step(cfg.Gx, fx, xv));
    yh.push(yv);
    PredictionHistory h;
    for (Index i = 0; i < cfg.nn(); ++i) {
      h.x.push_back(fx.raw[i]);
      h.y.push_back(yh[i]);
      h.u.push_back(fu.raw[i]);
    }
    for (Index i = 0; i <= cfg.ndx(); ++i) h.ex.push_back(exh[i]);
    for (Index i = 0; i < cfg.ndu(); ++i) h.eu.push_back(fu.filtered[i]);
    const VectorXd u = g.K * h.stacked() + g.offset;
    inverse_filter_step(cfg.Gu, fu, u);
    x = a * x + b * u(0) + load;
  }
  return std::abs(y);
}

SuiteReport suite_oracle() {
  SuiteReport r;
  r.suite = "oracle";
  const Scenario sc = four_tank_unreachable();
  const SimLog log = run(sc);
  const ReferenceOracle oracle(sc);
  const auto& last = log.records.back();
  const VectorXd ys = oracle.y_star(last.t);
  r.add_bound("||y(T) - y*(T)||_inf", (last.y - ys).cwiseAbs().maxCoeff(), 1e-2,
              "y* = (" + std::to_string(ys(0)) + ", " + std::to_string(ys(1)) + ")");
  r.add_bound("||theta_y(T) - theta_y*(T)||_inf", (last.theta_y - oracle.theta_y(last.t)).cwiseAbs().maxCoeff(), 1e-2);
  r.add_bound("y* nonzero", -ys.cwiseAbs().maxCoeff(), -1e-3, "the offset must not vanish");
  double viol = 0, kkt = 0;
  for (const auto& rec : log.records) {
    viol = std::max(viol, sc.controller.constraints.violation(rec.x, rec.u));
    kkt = std::max(kkt, rec.kkt);
  }
  r.add_bound("max constraint violation", viol, 1e-6);
  r.add_bound("max KKT residual", kkt, 1e-7);
  return r;
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"theorem1", "theorem2", "velocity", "oracle"};
  return names;
}

SuiteReport run_suite(const std::string& name) {
  if (name == "theorem1") return suite_theorem1();
  if (name == "theorem2") return suite_theorem2();
  if (name == "velocity") return suite_velocity();
  if (name == "oracle") return suite_oracle();
  throw std::invalid_argument("unknown suite: " + name);
}

}  // namespace immpc
