#include "immpc/sim.hpp"

#include "immpc/io.hpp"

#include <algorithm>
#include <numbers>
#include <random>
#include <stdexcept>

namespace immpc {

void Scenario::validate() const {
  plant.validate();
  disturbance.validate(plant);
  if (x0.size() != plant.n()) throw std::invalid_argument("scenario: x0 must have n entries");
  if (steps <= 0) throw std::invalid_argument("scenario: steps must be positive");
  if (!(noise >= 0)) throw std::invalid_argument("scenario: noise amplitude must be nonnegative");
  Index prev = -1;
  for (const auto& e : schedule) {
    if (e.time <= prev) throw std::invalid_argument("scenario: schedule times must be strictly increasing");
    if (e.time >= steps) throw std::invalid_argument("scenario: schedule time beyond the simulation");
    for (const auto& [i, v] : e.values)
      if (i < 0 || i >= disturbance.q()) throw std::invalid_argument("scenario: schedule edits an unknown w entry");
    prev = e.time;
  }
  if (controller.n() != plant.n() || controller.m() != plant.m() || controller.p() != plant.p())
    throw std::invalid_argument("scenario: controller model dimensions differ from the plant");
  controller.validate();
}

namespace {

void apply_edits(const Scenario& sc, Index t, VectorXd& w, bool* changed) {
  for (const auto& e : sc.schedule)
    if (e.time == t) {
      for (const auto& [i, v] : e.values) w(i) = v;
      if (changed) *changed = true;
    }
}

}  // namespace

std::vector<VectorXd> disturbance_trajectory(const Scenario& sc) {
  std::vector<VectorXd> out;
  out.reserve(static_cast<std::size_t>(sc.steps));
  VectorXd w = sc.disturbance.w0;
  for (Index t = 0; t < sc.steps; ++t) {
    apply_edits(sc, t, w, nullptr);
    out.push_back(w);
    w = sc.disturbance.S * w;
  }
  return out;
}

SimLog run(const Scenario& sc, const StepHook& hook) {
  sc.validate();
  SimLog log;
  log.scenario_hash = scenario_hash(sc);
  log.noisy = sc.noise > 0;
  log.records.reserve(static_cast<std::size_t>(sc.steps));

  Controller ctrl(sc.controller);
  std::mt19937_64 rng(sc.seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  auto noisy = [&](VectorXd v) {
    if (sc.noise > 0)
      for (Index i = 0; i < v.size(); ++i) v(i) += sc.noise * unif(rng);
    return v;
  };

  const auto& sys = sc.plant;
  const auto& dist = sc.disturbance;
  VectorXd x = sc.x0;
  VectorXd w = dist.w0;
  for (Index t = 0; t < sc.steps; ++t) {
    bool changed = false;
    apply_edits(sc, t, w, &changed);
    if (changed && t > 0) ctrl.signal_model_break();

    const VectorXd y = sys.C * x + dist.F * w;
    const VectorXd xm = noisy(x);
    const VectorXd ym = noisy(y);
    const StepResult res = ctrl.step(xm, ym);
    if (hook) hook(t, ctrl, res);

    StepRecord r;
    r.t = t;
    r.x = x;
    r.u = res.u;
    r.y = y;
    r.w = w;
    r.ex_norm = res.ex.norm();
    r.eu_norm = res.eu.norm();
    r.cost = res.objective;
    r.stage_cost = res.stage_cost;
    r.feasible = res.feasible;
    r.slack = res.slack;
    r.theta_y = res.theta.theta_y;
    r.solve_ms = res.solve_ms;
    r.kkt = res.kkt;
    r.trusted = res.trusted;
    r.status = res.status;
    log.records.push_back(std::move(r));

    x = plant_step(sys, dist, x, res.u, w).x_next;
    w = dist.S * w;
  }
  return log;
}

std::vector<Index> segment_starts(const Scenario& sc) {
  std::vector<Index> s{0};
  for (const auto& e : sc.schedule)
    if (e.time > 0) s.push_back(e.time);
  return s;
}

Index last_change(const Scenario& sc) { return segment_starts(sc).back(); }

ReferenceOracle::ReferenceOracle(const Scenario& sc) : starts_(segment_starts(sc)) {
  const auto w = disturbance_trajectory(sc);
  const auto& cfg = sc.controller;
  for (Index s : starts_) {
    const DisturbanceSnapshot snap{sc.disturbance.E, sc.disturbance.F, sc.disturbance.S, w[static_cast<std::size_t>(s)]};
    try {
      refs_.push_back(optimal_reference(sc.plant, snap, cfg.gen, cfg.gen_a, cfg.Pa, cfg.constraints, cfg.sigma,
                                        cfg.soc_facets));
    } catch (const std::runtime_error&) {
      refs_.push_back(std::nullopt);
    }
  }
}

const OptimalReference& ReferenceOracle::segment(Index t) const {
  const auto it = std::upper_bound(starts_.begin(), starts_.end(), t);
  const auto idx = static_cast<std::size_t>(std::distance(starts_.begin(), it) - 1);
  if (!refs_[idx]) throw std::runtime_error("reference oracle: segment admits no reference");
  return *refs_[idx];
}

VectorXd ReferenceOracle::y_star(Index t) const {
  const auto it = std::upper_bound(starts_.begin(), starts_.end(), t);
  return segment(t).y_star(t - *(it - 1));
}

VectorXd ReferenceOracle::theta_y(Index t) const {
  const auto it = std::upper_bound(starts_.begin(), starts_.end(), t);
  const OptimalReference& ref = segment(t);
  const MatrixXd Sk = blkdiag(ref.gen_a.S(), ref.theta.theta_y.size() / ref.gen_a.dimension());
  VectorXd th = ref.theta.theta_y;
  for (Index k = *(it - 1); k < t; ++k) th = Sk * th;
  return th;
}

Metrics metrics(const SimLog& log, const Scenario& sc, const std::function<VectorXd(Index)>& y_star, double tol) {
  Metrics m;
  if (log.records.empty()) return m;
  const auto& poly = sc.controller.constraints;
  double total_ms = 0;
  for (const auto& r : log.records) {
    m.max_violation = std::max(m.max_violation, poly.violation(r.x, r.u));
    if (!r.feasible) ++m.infeasible_steps;
    total_ms += r.solve_ms;
    m.max_solve_ms = std::max(m.max_solve_ms, r.solve_ms);
    m.max_kkt = std::max(m.max_kkt, r.kkt);
  }
  m.mean_solve_ms = total_ms / double(log.records.size());
  m.final_ex_norm = log.records.back().ex_norm;
  m.final_eu_norm = log.records.back().eu_norm;

  if (y_star) {
    const Index start = last_change(sc);
    std::optional<Index> settle;
    double err = 0;
    for (const auto& r : log.records) {
      if (r.t < start) continue;
      err = (r.y - y_star(r.t)).cwiseAbs().maxCoeff();
      if (err <= tol) {
        if (!settle) settle = r.t;
      } else {
        settle.reset();
      }
    }
    m.settling_time = settle;
    m.final_tracking_error = err;
  }
  return m;
}

Scenario four_tank_scenario(const FourTankOptions& opt) {
  if (opt.setpoints.empty() || opt.setpoints.front().time != 0)
    throw std::invalid_argument("four_tank_scenario: the first setpoint must start at t = 0");
  const auto ft = four_tank<double>();
  const double Ts = 1.0;
  const double omega = 2 * std::numbers::pi / 10;

  Scenario sc;
  sc.name = opt.sinusoid ? "four_tank_sine" : "four_tank_constant";
  sc.plant = discretize_euler(ft.continuous, Ts);
  sc.steps = opt.steps;
  sc.x0 = VectorXd::Zero(4);

  const SignalGenerator<double> gen = opt.sinusoid ? SignalGenerator<double>({omega}, true) : SignalGenerator<double>();
  const Index q = opt.sinusoid ? 5 : 3;
  auto& d = sc.disturbance;
  d.S = MatrixXd::Identity(q, q);
  if (opt.sinusoid) d.S.bottomRightCorner(2, 2) = gen.S().bottomRightCorner(2, 2);
  d.E = MatrixXd::Zero(4, q);
  d.E.col(0) = Ts * ft.operating_drift;
  d.F = MatrixXd::Zero(2, q);
  d.F.col(0) = ft.continuous.C * ft.operating_point.x;
  d.F(0, 1) = -1;
  d.F(1, 2) = -1;
  if (opt.sinusoid) d.F.col(3).setConstant(-opt.amplitude);
  d.w0 = VectorXd::Zero(q);
  d.w0(0) = 1;
  d.w0(1) = opt.setpoints.front().h2;
  d.w0(2) = opt.setpoints.front().h4;
  if (opt.sinusoid) d.w0(3) = 1;

  for (std::size_t i = 1; i < opt.setpoints.size(); ++i)
    sc.schedule.push_back({opt.setpoints[i].time, {{1, opt.setpoints[i].h2}, {2, opt.setpoints[i].h4}}});

  sc.controller = make_config(sc.plant, ft.constraints, opt.N, 0.5 * MatrixXd::Identity(4, 4),
                              0.5 * MatrixXd::Identity(2, 2), 5 * MatrixXd::Identity(2, 2), 5.0, 0.05, gen,
                              opt.sinusoid ? 1 : 0);
  sc.controller.soc_facets = opt.facets;
  sc.controller.variant = opt.variant;
  return sc;
}

Scenario four_tank_sine() {
  FourTankOptions opt;
  opt.setpoints = {{0, 16, 16}, {200, 15, 15}};
  return four_tank_scenario(opt);
}

Scenario four_tank_unreachable() {
  FourTankOptions opt;
  opt.setpoints = {{0, 21, 4}};
  Scenario sc = four_tank_scenario(opt);
  sc.name = "four_tank_unreachable";
  return sc;
}

Scenario four_tank_constant() {
  FourTankOptions opt;
  opt.setpoints = {{0, 16, 16}, {150, 14, 14}};
  opt.sinusoid = false;
  opt.steps = 300;
  return four_tank_scenario(opt);
}

}  // namespace immpc
