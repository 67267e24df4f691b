#include <doctest.h>

#include "immpc/io.hpp"
#include "immpc/verify.hpp"

#include <cmath>

using namespace immpc;

namespace {

Scenario short_sine(Index steps, std::vector<FourTankSetpoint> sp = {{0, 16, 16}}) {
  FourTankOptions opt;
  opt.steps = steps;
  opt.setpoints = std::move(sp);
  return four_tank_scenario(opt);
}

bool same_record(const StepRecord& a, const StepRecord& b) {
  // solve_ms is wall time and deliberately left out.
  return a.t == b.t && a.x == b.x && a.u == b.u && a.y == b.y && a.w == b.w && a.cost == b.cost &&
         a.feasible == b.feasible && a.slack == b.slack && a.theta_y == b.theta_y && a.status == b.status;
}

}  // namespace

TEST_CASE("runs are deterministic apart from timing") {
  Scenario sc = velocity_scenario(80);
  sc.noise = 0.01;
  sc.seed = 42;
  const SimLog a = run(sc), b = run(sc);
  REQUIRE(a.records.size() == 80);
  CHECK(a.noisy);
  CHECK(a.scenario_hash == b.scenario_hash);
  for (std::size_t i = 0; i < a.records.size(); ++i) CHECK(same_record(a.records[i], b.records[i]));

  sc.seed = 43;
  const SimLog c = run(sc);
  CHECK(c.scenario_hash != a.scenario_hash);
  CHECK(c.records[3].u != a.records[3].u);
}

TEST_CASE("the controller is causal") {
  // A later setpoint change leaves every earlier sample untouched.
  const SimLog full = run(short_sine(14, {{0, 16, 16}, {10, 15, 15}}));
  const SimLog prefix = run(short_sine(10));
  for (std::size_t i = 0; i < prefix.records.size(); ++i) CHECK(same_record(full.records[i], prefix.records[i]));
  CHECK(full.records[10].w(1) == 15.0);
  CHECK(full.records[9].w(1) == 16.0);
}

TEST_CASE("an unused disturbance component changes nothing") {
  const Scenario sc = short_sine(10);
  Scenario wide = sc;
  auto& d = wide.disturbance;
  const Index q = d.q();
  MatrixXd S = MatrixXd::Identity(q + 1, q + 1);
  S.topLeftCorner(q, q) = d.S;
  S(q, q) = 0.7;
  d.S = S;
  d.E.conservativeResize(Eigen::NoChange, q + 1);
  d.E.col(q).setZero();
  d.F.conservativeResize(Eigen::NoChange, q + 1);
  d.F.col(q).setZero();
  d.w0.conservativeResize(q + 1);
  d.w0(q) = 3.0;
  const SimLog a = run(sc), b = run(wide);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].u == b.records[i].u);
    CHECK(a.records[i].x == b.records[i].x);
  }
}

TEST_CASE("p(z) annihilates the simulated disturbance between schedule changes") {
  const Scenario sc = four_tank_sine();
  const auto w = disturbance_trajectory(sc);
  REQUIRE(static_cast<Index>(w.size()) == sc.steps);
  const auto& p = sc.controller.Gx.denominator();
  const Index nn = p.degree(), change = sc.schedule.front().time;
  double inside = 0, across = 0;
  for (Index t = nn; t < sc.steps; ++t) {
    VectorXd acc = VectorXd::Zero(w[0].size());
    for (Index i = 0; i <= nn; ++i) acc += p[i] * w[static_cast<std::size_t>(t - i)];
    const double r = acc.cwiseAbs().maxCoeff();
    if (t >= change && t < change + nn + 1)
      across = std::max(across, r);
    else
      inside = std::max(inside, r);
  }
  CHECK(inside < 1e-12);
  CHECK(across > 1e-3);
}

TEST_CASE("metrics bookkeeping") {
  const Scenario sc = short_sine(30);
  SimLog log = run(sc);
  const Metrics m = metrics(log, sc, [](Index) { return VectorXd::Zero(2); }, 1e6);
  CHECK(m.settling_time == 0);
  CHECK(m.infeasible_steps == 1);  // the startup step
  CHECK(m.max_violation <= 1e-6);
  CHECK(m.max_solve_ms >= m.mean_solve_ms);
  CHECK(m.final_ex_norm == log.records.back().ex_norm);

  const Metrics never = metrics(log, sc, [](Index) { return VectorXd::Constant(2, 100.0); }, 1e-3);
  CHECK_FALSE(never.settling_time.has_value());
  CHECK(never.final_tracking_error > 90);

  // Settling restarts after an excursion.
  log.records[25].y = VectorXd::Constant(2, 1e3);
  const Metrics late = metrics(log, sc, [](Index) { return VectorXd::Zero(2); }, 10.0);
  REQUIRE(late.settling_time.has_value());
  CHECK(*late.settling_time == 26);
}

TEST_CASE("segment bookkeeping") {
  const Scenario sc = four_tank_sine();
  CHECK(segment_starts(sc) == std::vector<Index>{0, 200});
  CHECK(last_change(sc) == 200);
  CHECK(last_change(short_sine(5)) == 0);
}

TEST_CASE("reference oracle: reachable targets give y* = 0, unreachable ones a fixed offset") {
  const ReferenceOracle reach(four_tank_sine());
  CHECK(reach.y_star(10).norm() < 1e-7);
  CHECK(reach.y_star(300).norm() < 1e-7);

  const ReferenceOracle far(four_tank_unreachable());
  const VectorXd y0 = far.y_star(0);
  CHECK(y0.norm() > 1.0);
  for (Index t : {1, 7, 123}) {
    // theta_y advanced to t reproduces y*(t) at offset zero.
    const auto& seg = far.segment(t);
    CHECK((reference_at(seg.gen_a, far.theta_y(t), 0) - far.y_star(t)).norm() < 1e-9);
  }
}

TEST_CASE("scenario validation") {
  Scenario sc = short_sine(5);
  CHECK_NOTHROW(sc.validate());
  Scenario bad = sc;
  bad.steps = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = sc;
  bad.schedule.push_back({7, {{1, 1.0}}});
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = sc;
  bad.schedule.push_back({2, {{9, 1.0}}});
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = sc;
  bad.x0 = VectorXd::Zero(3);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = sc;
  bad.noise = -1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
