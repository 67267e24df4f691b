#include <doctest.h>

#include "immpc/verify.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace immpc;

namespace {

MPCConfig four_tank_config(MPCVariant variant, bool sinusoid = true) {
  FourTankOptions opt;
  opt.sinusoid = sinusoid;
  opt.variant = variant;
  opt.steps = 10;
  return four_tank_scenario(opt).controller;
}

Scenario short_sine(Index steps) {
  FourTankOptions opt;
  opt.steps = steps;
  return four_tank_scenario(opt);
}

}  // namespace

TEST_CASE("four-tank basic problem has one free variable per predicted signal entry") {
  const MPCConfig cfg = four_tank_config(MPCVariant::basic);
  CHECK(cfg.nn() == 3);
  CHECK(cfg.ndx() == 0);
  CHECK(cfg.ndu() == 0);
  const MPCProblem prob = build_basic_qp(cfg, PredictionHistory::zeros(cfg));
  // e~x, x, y for k = 1..40 and e~u, u for k = 0..40
  const Index expected = 40 * (4 + 4 + 2) + 41 * (2 + 2);
  CHECK(expected == 564);
  CHECK(prob.layout.size == expected);
  CHECK(prob.qp.dim() == expected);
  CHECK(prob.state_row.size() == static_cast<std::size_t>(prob.qp.inequalities()));
}

TEST_CASE("horizon bound of the four-tank design") {
  const MPCConfig cfg = four_tank_config(MPCVariant::artificial_reference);
  CHECK(cfg.horizon_bound() == 10);
  CHECK(cfg.horizon_ok());
  MPCConfig shorter = cfg;
  shorter.N = 8;
  CHECK_FALSE(shorter.horizon_ok());
  shorter.N = 2;
  CHECK_THROWS_AS(shorter.validate(), std::invalid_argument);
}

TEST_CASE("zero history is optimal at zero cost") {
  for (MPCVariant v : {MPCVariant::basic, MPCVariant::artificial_reference}) {
    const MPCConfig cfg = four_tank_config(v);
    const PredictionHistory h = PredictionHistory::zeros(cfg);
    const MPCProblem prob = build_qp(cfg, h);
    const QPSolution sol = solve_qp(prob.qp, cfg.qp);
    REQUIRE(sol.optimal());
    CHECK(std::abs(objective_value(prob, sol.x)) < 1e-9);
    const Plan plan = decode(cfg, prob, h, sol.x);
    CHECK(plan.u[0].norm() < 1e-8);
    if (v == MPCVariant::artificial_reference) CHECK(plan.theta.theta_y.norm() < 1e-8);
  }
}

TEST_CASE("constant-only generator needs no cone auxiliaries") {
  const MPCConfig cfg = four_tank_config(MPCVariant::artificial_reference, false);
  CHECK(cfg.gen.pairs() == 0);
  const MPCProblem prob = build_artref_qp(cfg, PredictionHistory::zeros(cfg));
  CHECK(prob.layout.aux_count == 0);
  const MPCConfig sine = four_tank_config(MPCVariant::artificial_reference, true);
  CHECK(build_artref_qp(sine, PredictionHistory::zeros(sine)).layout.aux_count > 0);
}

TEST_CASE("optimizer trajectories satisfy the prediction recursions") {
  const Scenario sc = short_sine(8);
  run(sc, [&](Index t, const Controller& c, const StepResult& res) {
    if (!res.feasible) return;
    const MPCConfig& cfg = c.config();
    const Plan plan = decode(cfg, *c.last_problem(), c.last_history(), c.last_solution());
    std::vector<VectorXd> eu(plan.eu.begin(), plan.eu.end() - 1);
    const PredictedTrajectory pred = predict(cfg, c.last_history(), eu);
    double err = 0;
    for (Index k = 0; k < cfg.N; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      err = std::max({err, (pred.u[kk] - plan.u[kk]).cwiseAbs().maxCoeff(),
                      (pred.x[kk] - plan.x[kk]).cwiseAbs().maxCoeff(), (pred.y[kk] - plan.y[kk]).cwiseAbs().maxCoeff()});
    }
    INFO("t = " << t);
    CHECK(err < 1e-7);
    CHECK((res.u - plan.u[0]).norm() == 0.0);

    // u0* is the forward filter applied to e~u0* with the controller's past inputs.
    const auto& h = c.last_history();
    const auto& p = cfg.Gu.denominator();
    VectorXd u0 = cfg.Gu.Q(0) * plan.eu[0];
    for (Index i = 1; i <= p.degree(); ++i) u0 -= p[i] * h.u[static_cast<std::size_t>(i - 1)];
    CHECK((u0 / p[0] - res.u).cwiseAbs().maxCoeff() < 1e-9);
  });
}

TEST_CASE("predictions match plant rollouts on random instances") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10; ++i) {
    const PredictionInstance inst = random_prediction_instance(rng);
    CHECK(prediction_rollout_residual(inst, rng) < 1e-9);
  }
}

TEST_CASE("a disturbance outside the generator breaks the prediction") {
  std::mt19937_64 rng(11);
  PredictionInstance inst = random_prediction_instance(rng);
  // Replace the exosystem by one p(z) does not annihilate.
  const SignalGenerator<double> other({0.3 + 0.5 * std::numbers::pi}, false);
  inst.dist.S = other.S();
  inst.dist.E = MatrixXd::Ones(inst.cfg.n(), 2);
  inst.dist.F = MatrixXd::Zero(inst.cfg.p(), 2);
  inst.dist.w0 = VectorXd::Ones(2);
  CHECK(prediction_rollout_residual(inst, rng) > 1e-3);
}

TEST_CASE("shifted candidate stays feasible and the cost decreases") {
  const FeasibilityTrace tr = trace_feasibility(short_sine(60));
  CHECK(tr.candidate_checks > 40);
  CHECK(tr.max_candidate_eq < 1e-7);
  CHECK(tr.max_candidate_ineq < 1e-7);
  CHECK(tr.decrease_checks > 40);
  CHECK(tr.max_decrease_excess < 1e-5);
  CHECK(tr.max_violation < 1e-6);
}

TEST_CASE("shifted candidate of a zero solution is zero") {
  const MPCConfig cfg = four_tank_config(MPCVariant::artificial_reference);
  const MPCProblem prob = build_qp(cfg, PredictionHistory::zeros(cfg));
  const VectorXd c = shifted_candidate(cfg, prob.layout, VectorXd::Zero(prob.layout.size));
  CHECK(c.size() == prob.layout.size);
  CHECK(c.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("unconstrained law is affine in the history") {
  std::mt19937_64 rng(3);
  const MPCConfig cfg = scalar_gain_config();
  CHECK(gain_superposition_residual(cfg, rng, 20) < 1e-9);
  const LinearGain g = unconstrained_gain(cfg);
  CHECK(g.offset.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(g.K.cols() == PredictionHistory::zeros(cfg).stacked().size());
}

TEST_CASE("static gain rejects a constant load") { CHECK(static_gain_rejection(300) < 1e-6); }

TEST_CASE("velocity form written out directly gives the same inputs") {
  const VelocityComparison v = velocity_equivalence(100);
  CHECK(v.steps == 100);
  CHECK(v.constrained_steps > 0);
  CHECK(v.max_difference < 1e-8);
}

TEST_CASE("infeasible start falls back to a softened problem") {
  Scenario sc = short_sine(3);
  std::vector<StepResult> soft, held;
  run(sc, [&](Index, const Controller&, const StepResult& r) { soft.push_back(r); });
  sc.controller.fallback = FallbackPolicy::hold;
  run(sc, [&](Index, const Controller&, const StepResult& r) { held.push_back(r); });

  // The seeded history implies a sinusoid no admissible reference absorbs at t = 1.
  REQUIRE(soft.size() == 3);
  CHECK(soft[0].feasible);
  CHECK_FALSE(soft[1].feasible);
  CHECK(soft[1].slack > 0);
  CHECK(soft[1].status == QPStatus::infeasible);  // status of the nominal problem
  const auto& poly = sc.controller.constraints;
  CHECK((poly.Dbar * soft[1].u - poly.cbar).maxCoeff() <= 1e-9);  // input rows stay hard

  CHECK_FALSE(held[1].feasible);
  CHECK(held[1].slack == 0);
  CHECK((held[1].u - held[0].u).norm() == 0.0);
}

TEST_CASE("softening adds one slack shared by state rows only") {
  const MPCConfig cfg = four_tank_config(MPCVariant::artificial_reference);
  const MPCProblem prob = build_qp(cfg, PredictionHistory::zeros(cfg));
  const MPCProblem soft = soften_state_rows(prob, cfg);
  REQUIRE(soft.layout.slack >= 0);
  CHECK(soft.qp.dim() == prob.qp.dim() + 1);
  const Index s = soft.layout.slack;
  for (Index i = 0; i < prob.qp.inequalities(); ++i) {
    const bool state = prob.state_row[static_cast<std::size_t>(i)];
    CHECK((soft.qp.Aineq(i, s) != 0) == state);
  }
  CHECK(soft.qp.H(s, s) > 1e6);
}
