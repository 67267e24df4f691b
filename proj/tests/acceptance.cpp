// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "immpc/lyapunov.hpp"
#include "immpc/oracle.hpp"
#include "immpc/verify.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>

using namespace immpc;

namespace {

struct Bound {
  std::string label;
  double value;
  double tolerance;
  bool strict = false;  // value < tolerance instead of <=

  bool ok() const { return std::isfinite(value) && (strict ? value < tolerance : value <= tolerance); }
};

struct Criterion {
  int id;
  std::string title;
  std::vector<Bound> bounds;
  std::string note;

  bool ok() const {
    for (const auto& b : bounds)
      if (!b.ok()) return false;
    return true;
  }
};

void print(const Criterion& c) {
  std::string parts;
  for (const auto& b : c.bounds) {
    if (!parts.empty()) parts += "; ";
    parts += fmt::format("{} {:.3g} {} {:.0e}{}", b.label, b.value, b.strict ? "<" : "<=", b.tolerance,
                         b.ok() ? "" : " (violated)");
  }
  fmt::print("[{}] {:>2} {}: {}{}\n", c.ok() ? "PASS" : "FAIL", c.id, c.title, parts,
             c.note.empty() ? "" : " [" + c.note + "]");
  std::fflush(stdout);
}

double max_violation(const SimLog& log, const ConstraintPolytope<double>& poly, bool feasible_only) {
  double v = 0;
  for (const auto& r : log.records)
    if (!feasible_only || r.feasible) v = std::max(v, poly.violation(r.x, r.u));
  return v;
}

double max_kkt(const SimLog& log) {
  double k = 0;
  for (const auto& r : log.records) k = std::max(k, r.kkt);
  return k;
}

double randn(std::mt19937_64& rng) { return std::normal_distribution<double>()(rng); }

MatrixXd gaussian(std::mt19937_64& rng, Index r, Index c) {
  MatrixXd M(r, c);
  for (Index i = 0; i < M.size(); ++i) M.data()[i] = randn(rng);
  return M;
}

// Kept across criteria so each closed loop runs once.
double g_kkt = 0;

Criterion reproduction(const FeasibilityTrace& tr, const Scenario& sc) {
  Criterion c{1, "four-tank closed loop", {}, {}};
  const VectorXd p = sc.controller.Gx.denominator().coefficients();
  const VectorXd p_ref = (VectorXd(4) << 1, -2.618, 2.618, -1).finished();
  c.bounds.push_back({"|p - [1,-2.618,2.618,-1]|", (p - p_ref).cwiseAbs().maxCoeff(), 5e-4});

  const auto starts = segment_starts(sc);
  double after = 0;
  Index checked = 0;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    const Index end = s + 1 < starts.size() ? starts[s + 1] : sc.steps;
    for (Index t = starts[s] + 150; t < end; ++t) {
      after = std::max(after, tr.log.records[static_cast<std::size_t>(t)].y.cwiseAbs().maxCoeff());
      ++checked;
    }
  }
  c.bounds.push_back({"max|y| from 150 steps after each change", after, 0.05});
  c.bounds.push_back({"violation at feasible steps", max_violation(tr.log, sc.controller.constraints, true), 1e-6});
  c.bounds.push_back({"runtime s", tr.runtime_s, 60.0, true});
  c.note = fmt::format("{} steps, {} samples checked", sc.steps, checked);
  return c;
}

Criterion prediction() {
  Criterion c{2, "prediction recursions vs plant rollouts", {}, {}};
  std::mt19937_64 rng(1);
  double worst = 0;
  for (int i = 0; i < 20; ++i) worst = std::max(worst, prediction_rollout_residual(random_prediction_instance(rng), rng));
  c.bounds.push_back({"max residual over 20 instances", worst, 1e-9});
  return c;
}

Criterion candidate(const FeasibilityTrace& tr) {
  Criterion c{3, "shifted candidate, cost decrease, convergence", {}, {}};
  c.bounds.push_back({"candidate equality residual", tr.max_candidate_eq, 1e-7});
  c.bounds.push_back({"candidate inequality excess", tr.max_candidate_ineq, 1e-9});
  c.bounds.push_back({"J(t+1) - J(t) + l(t)", tr.max_decrease_excess, 1e-5});
  c.bounds.push_back({"||y(T) - y*(T)||", tr.final_tracking, 1e-2});
  c.note = fmt::format("{} candidate checks, {} decrease checks", tr.candidate_checks, tr.decrease_checks);
  if (tr.candidate_checks == 0 || tr.decrease_checks == 0) c.bounds.push_back({"checks performed", 1, 0});
  return c;
}

Criterion unreachable() {
  Criterion c{4, "unreachable reference offset", {}, {}};
  const Scenario sc = four_tank_unreachable();
  const SimLog log = run(sc);
  const ReferenceOracle oracle(sc);
  double offset = 0;
  // Steady window: the last 50 samples.
  for (Index t = sc.steps - 50; t < sc.steps; ++t)
    offset = std::max(offset, (log.records[static_cast<std::size_t>(t)].y - oracle.y_star(t)).cwiseAbs().maxCoeff());
  const VectorXd ys = oracle.y_star(sc.steps - 1);
  c.bounds.push_back({"max|y - y*| over the last 50 steps", offset, 1e-2});
  c.bounds.push_back({"offset nonzero: -|y*|", -ys.cwiseAbs().maxCoeff(), -1e-3});
  c.bounds.push_back({"violation over all steps", max_violation(log, sc.controller.constraints, false), 1e-6});
  c.note = fmt::format("y*(T) = ({:.4f}, {:.4f})", ys(0), ys(1));
  g_kkt = std::max(g_kkt, max_kkt(log));
  return c;
}

Criterion velocity() {
  Criterion c{5, "velocity form equivalence", {}, {}};
  const VelocityComparison v = velocity_equivalence(100);
  c.bounds.push_back({"max|u0 - u0_velocity|", v.max_difference, 1e-8});
  c.note = fmt::format("{} steps, {} with an active input bound", v.steps, v.constrained_steps);
  if (v.steps != 100) c.bounds.push_back({"steps short of 100", 1, 0});
  g_kkt = std::max(g_kkt, v.max_kkt);
  return c;
}

Criterion isometry() {
  Criterion c{6, "reference weight is shift invariant", {}, {}};
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> pos(0.1, 10.0);
  const auto gen = build_generator<double>({2 * std::numbers::pi / 10, 0.9, 2.0}, true);
  const Index outputs = 2, d = gen.dimension();
  VectorXd weights(outputs * d);
  for (Index o = 0; o < outputs; ++o) {
    weights(o * d) = pos(rng);
    for (Index j = 0; j < gen.pairs(); ++j) weights(o * d + gen.pair_offset(j)) = weights(o * d + gen.pair_offset(j) + 1) = pos(rng);
  }
  const MatrixXd shift = blkdiag(gen.S(), outputs);
  double worst = 0;
  for (const MatrixXd& Pa : {build_Pa(gen, outputs, 5.0), build_Pa(gen, outputs, weights)}) {
    for (int i = 0; i < 1000; ++i) {
      const VectorXd th = gaussian(rng, outputs * d, 1);
      const VectorXd sh = shift * th;
      const double a = std::sqrt(th.dot(Pa * th)), b = std::sqrt(sh.dot(Pa * sh));
      worst = std::max(worst, std::abs(a - b) / a);
    }
  }
  c.bounds.push_back({"max relative norm change", worst, 1e-12});
  c.note = "1000 samples each for uniform and pairwise weights";
  return c;
}

Criterion lyapunov() {
  Criterion c{7, "Lyapunov certificates", {}, {}};
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> radius(0.0, 0.95), angle(0.0, std::numbers::pi), unit(-1.0, 1.0);
  std::uniform_int_distribution<int> blocks(1, 4), factors(1, 3);
  double worst = 0, min_eig = 1e300;
  Index largest = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Index b = blocks(rng);
    // Real and complex-pair roots, all of modulus < 0.95.
    Polynomial<double> q{1.0};
    for (int f = factors(rng); f > 0 && (q.degree() + 2) * b <= 12; --f) {
      const double r = radius(rng);
      q = std::bernoulli_distribution(0.5)(rng) ? q * Polynomial<double>{1.0, -2 * r * std::cos(angle(rng)), r * r}
                                                : q * Polynomial<double>{1.0, -r * unit(rng)};
    }
    if (q.degree() == 0) q = Polynomial<double>{1.0, -radius(rng)};
    MatrixXd T = gaussian(rng, b, b) + 3 * MatrixXd::Identity(b, b);
    const MatrixXd Tinv = T.inverse();
    std::vector<MatrixXd> Q;
    for (Index i = 0; i <= q.degree(); ++i) Q.push_back(T * (q[i] * MatrixXd::Identity(b, b)) * Tinv);
    const MatrixXd Ae = companion_realization(Q);
    largest = std::max(largest, Ae.rows());
    const MatrixXd W = MatrixXd::Identity(Ae.rows(), Ae.rows());
    const double eps = default_lyapunov_slack(W);
    const MatrixXd P = dlyap(Ae, W, eps);
    worst = std::max(worst, lyapunov_residual(Ae, P, W, eps));
    min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<MatrixXd>(P).eigenvalues().minCoeff());
  }
  c.bounds.push_back({"max residual", worst, 1e-9});
  c.bounds.push_back({"-min eigenvalue of P", -min_eig, 0.0, true});
  c.note = fmt::format("50 companions up to size {}", largest);
  return c;
}

Criterion linearity() {
  Criterion c{8, "linearity of the unconstrained law", {}, {}};
  std::mt19937_64 rng(8);
  FourTankOptions opt;
  opt.steps = 10;
  const MPCConfig ft = four_tank_scenario(opt).controller;
  const double scalar = gain_superposition_residual(scalar_gain_config(), rng, 100);
  const double tank = gain_superposition_residual(ft, rng, 100);
  c.bounds.push_back({"superposition, scalar plant", scalar, 1e-9});
  c.bounds.push_back({"superposition, four-tank", tank, 1e-9});
  c.bounds.push_back({"steady |y| under the static gain", static_gain_rejection(300), 1e-6});
  c.note = "100 random history pairs each";
  return c;
}

QPProblem random_qp(std::mt19937_64& rng) {
  std::uniform_int_distribution<Index> dim(2, 20);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Index d = dim(rng);
  const Index e = std::uniform_int_distribution<Index>(0, d / 3)(rng);
  const Index m = std::uniform_int_distribution<Index>(0, 2 * d)(rng);
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

Criterion qp_soundness(const FeasibilityTrace& tr) {
  Criterion c{9, "QP solver soundness", {}, {}};
  g_kkt = std::max(g_kkt, tr.max_kkt);
  std::mt19937_64 rng(9);
  double gap = 0, kkt = 0, infeas = 0;
  int solved = 0;
  for (int i = 0; i < 100; ++i) {
    const QPProblem qp = random_qp(rng);
    const QPSolution sol = solve_qp(qp);
    if (!sol.optimal()) continue;
    ++solved;
    const auto ref = dual_gradient_qp(qp);
    infeas = std::max(infeas, ref.primal_infeasibility);
    gap = std::max(gap, std::abs(sol.objective - ref.dual_objective) / (1 + std::abs(ref.dual_objective)));
    const KKTResiduals r = kkt_residuals(qp, sol.x, sol.nu_eq, sol.lambda_ineq);
    kkt = std::max(kkt, r.max());
  }
  c.bounds.push_back({"KKT over closed-loop runs", g_kkt, 1e-7});
  c.bounds.push_back({"KKT over random QPs", kkt, 1e-7});
  c.bounds.push_back({"objective gap to dual gradient", gap, 1e-6});
  c.bounds.push_back({"unsolved random QPs", 100.0 - solved, 0.0});
  c.note = fmt::format("oracle primal infeasibility {:.1e}", infeas);
  return c;
}

Criterion soc_soundness() {
  Criterion c{10, "cone approximation soundness", {}, {}};
  FourTankOptions opt;
  opt.steps = 10;
  const MPCConfig cfg = four_tank_scenario(opt).controller;
  const auto& gen = cfg.gen;
  const auto& poly = cfg.constraints;
  const Index n = cfg.n(), m = cfg.m(), d = gen.dimension();
  const auto groups = reference_row_groups(gen, poly, (n + m) * d, 0, n * d);
  const VectorXd bounds = poly.cbar - cfg.sigma;

  // Box rows come in (max, min) pairs per signal.
  auto range = [&](Index row_max, Index row_min) { return std::pair{-poly.cbar(row_min), poly.cbar(row_max)}; };
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0), s(-1.0, 1.0);
  const std::vector<int> facet_counts{8, 40, 64};
  std::vector<int> false_accept(facet_counts.size(), 0);
  int margin_points = 0, rejected = 0, admissible = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    ArtificialReferenceParam ref{VectorXd::Zero(n * d), VectorXd::Zero(m * d), VectorXd::Zero(0)};
    auto fill = [&](VectorXd& theta, Index signal, std::pair<double, double> r) {
      const double half = (r.second - r.first) / 2;
      theta(signal * d) = r.first + u(rng) * (r.second - r.first);
      for (Index j = 1; j < d; ++j) theta(signal * d + j) = 0.3 * half * s(rng);
    };
    for (Index i = 0; i < n; ++i) fill(ref.theta_x, i, range(i, n + i));
    for (Index j = 0; j < m; ++j) fill(ref.theta_u, j, range(2 * n + j, 2 * n + m + j));
    VectorXd v(ref.theta_x.size() + ref.theta_u.size());
    v << ref.theta_x, ref.theta_u;

    const AdmissibleResult truth = admissible_check(ref, gen, poly, cfg.sigma);
    admissible += truth.admissible;
    for (std::size_t k = 0; k < facet_counts.size(); ++k)
      if (soc_feasible(groups, bounds, v, facet_counts[k]) && !truth.admissible) ++false_accept[k];
    if (truth.admissible && (truth.margin.array() >= 0.01 * bounds.array()).all()) {
      ++margin_points;
      if (!soc_feasible(groups, bounds, v, 64)) ++rejected;
    }
  }
  for (std::size_t k = 0; k < facet_counts.size(); ++k)
    c.bounds.push_back({fmt::format("false accepts at K={}", facet_counts[k]), double(false_accept[k]), 0.0});
  const double rate = margin_points > 0 ? double(rejected) / margin_points : 1.0;
  c.bounds.push_back({"false-reject rate at K=64", rate, 0.02, true});
  c.note = fmt::format("{} admissible of 1000, {} with >= 1% margin", admissible, margin_points);
  if (margin_points < 50) c.bounds.push_back({"too few points with margin", 1, 0});
  return c;
}

}  // namespace

int main() {
  std::vector<Criterion> all;
  auto record = [&](Criterion c) {
    print(c);
    all.push_back(std::move(c));
  };

  const Scenario sine = four_tank_sine();
  const FeasibilityTrace tr = trace_feasibility(sine);
  record(reproduction(tr, sine));
  record(prediction());
  record(candidate(tr));
  record(unreachable());
  record(velocity());
  record(isometry());
  record(lyapunov());
  record(linearity());
  record(qp_soundness(tr));
  record(soc_soundness());

  int failed = 0;
  for (const auto& c : all) failed += !c.ok();
  fmt::print("{} of {} criteria passed\n", all.size() - failed, all.size());
  return failed == 0 ? 0 : 1;
}
