#include "immpc/io.hpp"

#include <json.hpp>

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace immpc {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& what) { throw ConfigError(what); }

void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(section + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items())
    if (!ok.count(key)) fail(section + ": unknown key '" + key + "'");
}

double number(const json& j, const std::string& what) {
  if (!j.is_number()) fail(what + ": expected a number");
  return j.get<double>();
}

Index integer(const json& j, const std::string& what) {
  if (!j.is_number_integer()) fail(what + ": expected an integer");
  return j.get<Index>();
}

VectorXd vector(const json& j, const std::string& what) {
  if (!j.is_array()) fail(what + ": expected an array");
  VectorXd v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = number(j[i], what);
  return v;
}

MatrixXd matrix(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) fail(what + ": expected a nonempty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  MatrixXd M(static_cast<Index>(j.size()), static_cast<Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) fail(what + ": rows must be arrays of equal length");
    for (std::size_t c = 0; c < cols; ++c) M(static_cast<Index>(r), static_cast<Index>(c)) = number(j[r][c], what);
  }
  return M;
}

/// Either a matrix or a scalar s meaning s I.
MatrixXd weight(const json& j, Index dim, const std::string& what) {
  if (j.is_number()) return number(j, what) * MatrixXd::Identity(dim, dim);
  MatrixXd M = matrix(j, what);
  if (M.rows() != dim || M.cols() != dim) fail(what + ": expected " + std::to_string(dim) + "x" + std::to_string(dim));
  return M;
}

json to_json(const MatrixXd& M) {
  json rows = json::array();
  for (Index r = 0; r < M.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
    rows.push_back(row);
  }
  return rows;
}

json to_json(const VectorXd& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

const char* variant_name(MPCVariant v) { return v == MPCVariant::basic ? "basic" : "artificial_reference"; }
const char* fallback_name(FallbackPolicy f) { return f == FallbackPolicy::hold ? "hold" : "soften_state"; }

void parse_controller(const json& j, Scenario& sc, bool preset) {
  check_keys(j, "controller",
             {"N", "Q", "R", "Qy", "Pa", "sigma", "frequencies", "constant", "reference_frequencies", "numerator",
              "numerator_x", "numerator_u", "soc_facets", "variant", "fallback", "lowpass_alpha", "qp"});
  MPCConfig& cfg = sc.controller;
  const Index n = sc.plant.n(), m = sc.plant.m(), p = sc.plant.p();

  SignalGenerator<double> gen = cfg.gen;
  Index ref_freqs = cfg.gen_a.pairs();
  if (j.contains("frequencies") || j.contains("constant")) {
    std::vector<double> freqs;
    if (j.contains("frequencies"))
      for (const auto& f : j["frequencies"]) freqs.push_back(number(f, "controller.frequencies"));
    const bool constant = j.contains("constant") ? j["constant"].get<bool>() : true;
    try {
      gen = SignalGenerator<double>(freqs, constant);
    } catch (const std::invalid_argument& e) {
      fail(std::string("controller: ") + e.what());
    }
    ref_freqs = gen.pairs();
  } else if (!preset) {
    fail("controller: 'frequencies' is required");
  }
  if (j.contains("reference_frequencies")) ref_freqs = integer(j["reference_frequencies"], "controller.reference_frequencies");
  if (ref_freqs < 0 || ref_freqs > gen.pairs()) fail("controller: reference_frequencies exceeds the generator");

  const Index N = j.contains("N") ? integer(j["N"], "controller.N") : (preset ? cfg.N : 0);
  if (N <= 0) fail("controller: N must be a positive integer");
  const MatrixXd Q = j.contains("Q") ? weight(j["Q"], n, "controller.Q") : (preset ? cfg.Q : MatrixXd::Identity(n, n));
  const MatrixXd R = j.contains("R") ? weight(j["R"], m, "controller.R") : (preset ? cfg.R : MatrixXd::Identity(m, m));
  const MatrixXd Qy = j.contains("Qy") ? weight(j["Qy"], p, "controller.Qy") : (preset ? cfg.Qy : MatrixXd::Identity(p, p));

  MPCConfig out = cfg;
  try {
    out = make_config(sc.plant, cfg.constraints, N, Q, R, Qy, 1.0, 1.0, gen, ref_freqs);
  } catch (const std::invalid_argument& e) {
    fail(std::string("controller: ") + e.what());
  }
  const Index da = out.gen_a.dimension();
  if (j.contains("Pa")) {
    if (j["Pa"].is_number()) {
      try {
        out.Pa = build_Pa(out.gen_a, p, number(j["Pa"], "controller.Pa"));
      } catch (const std::invalid_argument& e) {
        fail(std::string("controller: ") + e.what());
      }
    } else {
      out.Pa = weight(j["Pa"], p * da, "controller.Pa");
    }
  } else if (preset && cfg.Pa.rows() == p * da) {
    out.Pa = cfg.Pa;
  } else {
    out.Pa = MatrixXd::Identity(p * da, p * da);
  }
  const Index rows = out.constraints.rows();
  if (j.contains("sigma")) {
    out.sigma = j["sigma"].is_number() ? VectorXd::Constant(rows, number(j["sigma"], "controller.sigma"))
                                       : vector(j["sigma"], "controller.sigma");
    if (out.sigma.size() != rows) fail("controller.sigma: expected one entry per constraint row");
  } else if (preset && cfg.sigma.size() == rows) {
    out.sigma = cfg.sigma;
  } else {
    out.sigma = VectorXd::Constant(rows, 0.05);
  }

  auto numerator = [&](const json& list, Index dim, const std::string& what) {
    std::vector<MatrixXd> Qs;
    if (!list.is_array() || list.empty()) fail(what + ": expected a nonempty list of matrices");
    for (const auto& M : list) Qs.push_back(weight(M, dim, what));
    return Qs;
  };
  try {
    const auto pz = char_poly(out.gen);
    if (j.contains("numerator")) {
      const VectorXd q = vector(j["numerator"], "controller.numerator");
      if (q.size() == 0) fail("controller.numerator: empty polynomial");
      out.Gx = MatrixFractionFilter<double>::scalar(n, Polynomial<double>(q), pz);
      out.Gu = MatrixFractionFilter<double>::scalar(m, Polynomial<double>(q), pz);
    }
    if (j.contains("numerator_x"))
      out.Gx = MatrixFractionFilter<double>(numerator(j["numerator_x"], n, "controller.numerator_x"), pz);
    if (j.contains("numerator_u"))
      out.Gu = MatrixFractionFilter<double>(numerator(j["numerator_u"], m, "controller.numerator_u"), pz);
    out.terminal = build_terminal_cost(out.Gx, out.Gu, out.Q, out.R);
  } catch (const std::invalid_argument& e) {
    fail(std::string("controller: ") + e.what());
  }

  out.soc_facets = preset ? cfg.soc_facets : 32;
  if (j.contains("soc_facets")) out.soc_facets = static_cast<int>(integer(j["soc_facets"], "controller.soc_facets"));
  out.variant = preset ? cfg.variant : MPCVariant::artificial_reference;
  if (j.contains("variant")) {
    const std::string v = j["variant"].get<std::string>();
    if (v == "basic")
      out.variant = MPCVariant::basic;
    else if (v == "artificial_reference")
      out.variant = MPCVariant::artificial_reference;
    else
      fail("controller.variant: expected 'basic' or 'artificial_reference'");
  }
  if (j.contains("fallback")) {
    const std::string f = j["fallback"].get<std::string>();
    if (f == "hold")
      out.fallback = FallbackPolicy::hold;
    else if (f == "soften_state")
      out.fallback = FallbackPolicy::soften_state;
    else
      fail("controller.fallback: expected 'soften_state' or 'hold'");
  }
  if (j.contains("lowpass_alpha")) out.lowpass_alpha = number(j["lowpass_alpha"], "controller.lowpass_alpha");
  if (j.contains("qp")) {
    check_keys(j["qp"], "controller.qp", {"max_iter", "tolerance", "polish"});
    if (j["qp"].contains("max_iter")) out.qp.max_iter = static_cast<int>(integer(j["qp"]["max_iter"], "qp.max_iter"));
    if (j["qp"].contains("tolerance")) out.qp.tolerance = number(j["qp"]["tolerance"], "qp.tolerance");
    if (j["qp"].contains("polish")) out.qp.polish = j["qp"]["polish"].get<bool>();
  }
  cfg = std::move(out);
}

Assertions parse_assertions(const json& j) {
  check_keys(j, "assertions",
             {"max_violation", "max_infeasible", "settle_tol", "settle_within", "settle_to_zero", "final_tracking",
              "max_kkt", "max_runtime_s"});
  Assertions a;
  if (j.contains("max_violation")) a.max_violation = number(j["max_violation"], "assertions.max_violation");
  if (j.contains("max_infeasible")) a.max_infeasible = integer(j["max_infeasible"], "assertions.max_infeasible");
  if (j.contains("settle_tol")) a.settle_tol = number(j["settle_tol"], "assertions.settle_tol");
  if (j.contains("settle_within")) a.settle_within = integer(j["settle_within"], "assertions.settle_within");
  if (j.contains("settle_to_zero")) a.settle_to_zero = j["settle_to_zero"].get<bool>();
  if (j.contains("final_tracking")) a.final_tracking = number(j["final_tracking"], "assertions.final_tracking");
  if (j.contains("max_kkt")) a.max_kkt = number(j["max_kkt"], "assertions.max_kkt");
  if (j.contains("max_runtime_s")) a.max_runtime_s = number(j["max_runtime_s"], "assertions.max_runtime_s");
  return a;
}

Experiment parse(const json& j) {
  check_keys(j, "experiment",
             {"name", "steps", "seed", "noise", "plant", "disturbance", "schedule", "controller", "assertions"});
  for (const char* s : {"plant", "disturbance", "controller"})
    if (!j.contains(s)) fail(std::string("missing section '") + s + "'");

  Experiment ex;
  Scenario& sc = ex.scenario;
  const json& pj = j["plant"];
  const json& dj = j["disturbance"];
  const bool preset = pj.is_object() && pj.contains("preset");

  if (preset) {
    check_keys(pj, "plant", {"preset"});
    if (pj["preset"] != "four_tank") fail("plant.preset: only 'four_tank' is available");
    check_keys(dj, "disturbance", {"setpoints", "sinusoid", "amplitude"});
    FourTankOptions opt;
    if (dj.contains("setpoints")) {
      opt.setpoints.clear();
      for (const auto& s : dj["setpoints"]) {
        check_keys(s, "disturbance.setpoints", {"time", "h2", "h4"});
        opt.setpoints.push_back({s.contains("time") ? integer(s["time"], "setpoint.time") : 0,
                                 number(s.at("h2"), "setpoint.h2"), number(s.at("h4"), "setpoint.h4")});
      }
    }
    if (dj.contains("sinusoid")) opt.sinusoid = dj["sinusoid"].get<bool>();
    if (dj.contains("amplitude")) opt.amplitude = number(dj["amplitude"], "disturbance.amplitude");
    if (j.contains("steps")) opt.steps = integer(j["steps"], "steps");
    try {
      sc = four_tank_scenario(opt);
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
  } else {
    check_keys(pj, "plant", {"A", "B", "C", "Ts", "constraints", "x0"});
    sc.plant.A = matrix(pj.at("A"), "plant.A");
    sc.plant.B = matrix(pj.at("B"), "plant.B");
    sc.plant.C = matrix(pj.at("C"), "plant.C");
    sc.plant.Ts = pj.contains("Ts") ? number(pj["Ts"], "plant.Ts") : 1.0;
    try {
      sc.plant.validate();
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
    const Index n = sc.plant.n(), m = sc.plant.m();
    sc.x0 = pj.contains("x0") ? vector(pj["x0"], "plant.x0") : VectorXd::Zero(n);

    if (!pj.contains("constraints")) fail("plant: 'constraints' is required");
    const json& cj = pj["constraints"];
    auto& poly = sc.controller.constraints;
    if (cj.contains("Cbar")) {
      check_keys(cj, "plant.constraints", {"Cbar", "Dbar", "cbar"});
      poly.Cbar = matrix(cj.at("Cbar"), "constraints.Cbar");
      poly.Dbar = matrix(cj.at("Dbar"), "constraints.Dbar");
      poly.cbar = vector(cj.at("cbar"), "constraints.cbar");
    } else {
      check_keys(cj, "plant.constraints", {"x_min", "x_max", "u_min", "u_max"});
      try {
        poly = ConstraintPolytope<double>::box(vector(cj.at("x_min"), "x_min"), vector(cj.at("x_max"), "x_max"),
                                               vector(cj.at("u_min"), "u_min"), vector(cj.at("u_max"), "u_max"));
      } catch (const std::invalid_argument& e) {
        fail(e.what());
      }
    }
    try {
      poly.validate(n, m);
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }

    check_keys(dj, "disturbance", {"E", "F", "S", "w0"});
    sc.disturbance.E = matrix(dj.at("E"), "disturbance.E");
    sc.disturbance.F = matrix(dj.at("F"), "disturbance.F");
    sc.disturbance.S = matrix(dj.at("S"), "disturbance.S");
    sc.disturbance.w0 = vector(dj.at("w0"), "disturbance.w0");
    sc.controller.plant = sc.plant;
    if (!j.contains("steps")) fail("'steps' is required");
  }

  if (j.contains("name")) sc.name = j["name"].get<std::string>();
  if (sc.name.empty()) sc.name = "scenario";
  if (j.contains("steps")) sc.steps = integer(j["steps"], "steps");
  if (j.contains("seed")) sc.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("noise")) sc.noise = number(j["noise"], "noise");

  if (j.contains("schedule")) {
    if (!j["schedule"].is_array()) fail("schedule: expected an array");
    if (preset && !j["schedule"].empty()) fail("schedule: the four_tank preset takes its changes from disturbance.setpoints");
    for (const auto& e : j["schedule"]) {
      check_keys(e, "schedule entry", {"time", "w"});
      ScheduleEdit edit;
      edit.time = integer(e.at("time"), "schedule.time");
      for (const auto& pair : e.at("w")) {
        if (!pair.is_array() || pair.size() != 2) fail("schedule.w: expected [index, value] pairs");
        edit.values.emplace_back(integer(pair[0], "schedule.w index"), number(pair[1], "schedule.w value"));
      }
      sc.schedule.push_back(std::move(edit));
    }
  }

  parse_controller(j["controller"], sc, preset);
  if (j.contains("assertions")) ex.assertions = parse_assertions(j["assertions"]);

  try {
    sc.validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  return ex;
}

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Experiment parse_experiment(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  try {
    return parse(j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed experiment: ") + e.what());
  }
}

Experiment load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment(ss.str());
}

std::string scenario_to_json(const Scenario& sc) {
  const MPCConfig& c = sc.controller;
  json j;
  j["name"] = sc.name;
  j["steps"] = sc.steps;
  j["seed"] = sc.seed;
  j["noise"] = sc.noise;
  j["plant"] = {{"A", to_json(sc.plant.A)},
                {"B", to_json(sc.plant.B)},
                {"C", to_json(sc.plant.C)},
                {"Ts", sc.plant.Ts},
                {"x0", to_json(sc.x0)},
                {"constraints",
                 {{"Cbar", to_json(c.constraints.Cbar)},
                  {"Dbar", to_json(c.constraints.Dbar)},
                  {"cbar", to_json(c.constraints.cbar)}}}};
  j["disturbance"] = {{"E", to_json(sc.disturbance.E)},
                      {"F", to_json(sc.disturbance.F)},
                      {"S", to_json(sc.disturbance.S)},
                      {"w0", to_json(sc.disturbance.w0)}};
  json sched = json::array();
  for (const auto& e : sc.schedule) {
    json w = json::array();
    for (const auto& [i, v] : e.values) w.push_back({i, v});
    sched.push_back({{"time", e.time}, {"w", w}});
  }
  j["schedule"] = sched;
  json nx = json::array(), nu = json::array();
  for (const auto& M : c.Gx.numerator()) nx.push_back(to_json(M));
  for (const auto& M : c.Gu.numerator()) nu.push_back(to_json(M));
  j["controller"] = {{"N", c.N},
                     {"Q", to_json(c.Q)},
                     {"R", to_json(c.R)},
                     {"Qy", to_json(c.Qy)},
                     {"Pa", to_json(c.Pa)},
                     {"sigma", to_json(c.sigma)},
                     {"frequencies", c.gen.frequencies()},
                     {"constant", c.gen.has_constant()},
                     {"reference_frequencies", c.gen_a.pairs()},
                     {"numerator_x", nx},
                     {"numerator_u", nu},
                     {"soc_facets", c.soc_facets},
                     {"variant", variant_name(c.variant)},
                     {"fallback", fallback_name(c.fallback)},
                     {"lowpass_alpha", c.lowpass_alpha},
                     {"qp", {{"max_iter", c.qp.max_iter}, {"tolerance", c.qp.tolerance}, {"polish", c.qp.polish}}}};
  return j.dump();
}

std::string scenario_hash(const Scenario& sc) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : scenario_to_json(sc)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

void write_csv(std::ostream& os, const SimLog& log) {
  if (log.records.empty()) return;
  const auto& r0 = log.records.front();
  os << "t";
  for (Index i = 0; i < r0.x.size(); ++i) os << ",x" << i + 1;
  for (Index i = 0; i < r0.u.size(); ++i) os << ",u" << i + 1;
  for (Index i = 0; i < r0.y.size(); ++i) os << ",y" << i + 1;
  os << ",e_x_norm,e_u_norm,cost,feasible,slack,solve_ms\n";
  for (const auto& r : log.records) {
    os << r.t;
    for (Index i = 0; i < r.x.size(); ++i) os << ',' << fmt17(r.x(i));
    for (Index i = 0; i < r.u.size(); ++i) os << ',' << fmt17(r.u(i));
    for (Index i = 0; i < r.y.size(); ++i) os << ',' << fmt17(r.y(i));
    os << ',' << fmt17(r.ex_norm) << ',' << fmt17(r.eu_norm) << ',' << fmt17(r.cost) << ',' << (r.feasible ? 1 : 0)
       << ',' << fmt17(r.slack) << ',' << fmt17(r.solve_ms) << '\n';
  }
}

bool RunReport::passed() const {
  for (const auto& a : assertions)
    if (!a.passed) return false;
  return true;
}

std::vector<AssertionOutcome> check_assertions(const Experiment& ex, const SimLog& log, double runtime_s) {
  const Assertions& a = ex.assertions;
  const Scenario& sc = ex.scenario;
  std::vector<AssertionOutcome> out;
  auto add = [&](std::string name, bool ok, std::string detail) { out.push_back({std::move(name), ok, std::move(detail)}); };

  if (a.max_violation) {
    double worst = 0;
    for (const auto& r : log.records)
      if (r.feasible) worst = std::max(worst, sc.controller.constraints.violation(r.x, r.u));
    add("max_violation", worst <= *a.max_violation, "worst " + fmt17(worst));
  }
  if (a.max_infeasible) {
    Index count = 0;
    for (const auto& r : log.records) count += r.feasible ? 0 : 1;
    add("max_infeasible", count <= *a.max_infeasible, std::to_string(count) + " infeasible steps");
  }
  if (a.max_kkt) {
    double worst = 0;
    for (const auto& r : log.records)
      if (r.feasible) worst = std::max(worst, r.kkt);
    add("max_kkt", worst <= *a.max_kkt, "worst " + fmt17(worst));
  }
  if (a.max_runtime_s) add("max_runtime_s", runtime_s <= *a.max_runtime_s, fmt17(runtime_s) + " s");

  if (a.settle_tol || a.final_tracking) {
    std::optional<ReferenceOracle> oracle;
    std::string oracle_error;
    try {
      oracle.emplace(sc);
    } catch (const std::exception& e) {
      oracle_error = e.what();
    }
    auto target = [&](Index t) -> VectorXd {
      if (a.settle_to_zero) return VectorXd::Zero(sc.plant.p());
      return oracle->y_star(t);
    };
    try {
      if (a.settle_tol) {
        const auto starts = segment_starts(sc);
        double worst = 0;
        for (std::size_t s = 0; s < starts.size(); ++s) {
          const Index from = starts[s] + a.settle_within;
          const Index to = s + 1 < starts.size() ? starts[s + 1] : sc.steps;
          for (Index t = from; t < to; ++t)
            worst = std::max(worst, (log.records[static_cast<std::size_t>(t)].y - target(t)).cwiseAbs().maxCoeff());
        }
        add("settle", worst <= *a.settle_tol,
            "max |y - y*| " + fmt17(worst) + " from " + std::to_string(a.settle_within) + " samples after each change");
      }
      if (a.final_tracking) {
        const auto& r = log.records.back();
        const double err = (r.y - target(r.t)).norm();
        add("final_tracking", err <= *a.final_tracking, "||y - y*|| " + fmt17(err));
      }
    } catch (const std::exception& e) {
      add("reference_oracle", false, oracle_error.empty() ? e.what() : oracle_error);
    }
  }
  return out;
}

RunReport simulate_experiment(const Experiment& ex, const std::filesystem::path& out_dir,
                              std::optional<Index> dump_qp_at) {
  const Scenario& sc = ex.scenario;
  RunReport rep;
  rep.scenario = sc.name;
  std::ostringstream dump;
  bool dumped = false;
  StepHook hook;
  if (dump_qp_at) {
    hook = [&](Index t, const Controller& ctrl, const StepResult&) {
      if (t == *dump_qp_at && ctrl.last_problem()) {
        write_qp(dump, ctrl.last_problem()->qp);
        dumped = true;
      }
    };
  }
  const auto t0 = std::chrono::steady_clock::now();
  const SimLog log = run(sc, hook);
  rep.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.scenario_hash = log.scenario_hash;
  rep.noisy = log.noisy;

  std::function<VectorXd(Index)> y_star;
  std::optional<ReferenceOracle> oracle;
  try {
    oracle.emplace(sc);
    oracle->y_star(last_change(sc));
    y_star = [&](Index t) { return oracle->y_star(t); };
  } catch (const std::exception&) {
    y_star = nullptr;
  }
  const double tol = ex.assertions.settle_tol.value_or(kConvergedTolerance);
  rep.metrics = metrics(log, sc, y_star, tol);
  rep.converged = rep.metrics.settling_time.has_value();
  rep.assertions = check_assertions(ex, log, rep.runtime_s);

  std::filesystem::create_directories(out_dir);
  rep.csv_path = out_dir / (sc.name + ".csv");
  rep.report_path = out_dir / (sc.name + ".report.json");
  {
    std::ofstream csv(rep.csv_path);
    write_csv(csv, log);
  }
  if (dump_qp_at && dumped) {
    rep.qp_dump_path = out_dir / (sc.name + ".qp_t" + std::to_string(*dump_qp_at) + ".txt");
    std::ofstream(*rep.qp_dump_path) << dump.str();
  }
  std::ofstream(rep.report_path) << report_json(rep) << '\n';
  return rep;
}

std::string report_json(const RunReport& r) {
  json j;
  j["scenario"] = r.scenario;
  j["scenario_hash"] = r.scenario_hash;
  j["converged"] = r.converged;
  j["noisy"] = r.noisy;
  j["runtime_s"] = r.runtime_s;
  const Metrics& m = r.metrics;
  j["metrics"] = {{"settling_time", m.settling_time ? json(*m.settling_time) : json(nullptr)},
                  {"max_violation", m.max_violation},
                  {"infeasible_steps", m.infeasible_steps},
                  {"mean_solve_ms", m.mean_solve_ms},
                  {"max_solve_ms", m.max_solve_ms},
                  {"final_ex_norm", m.final_ex_norm},
                  {"final_eu_norm", m.final_eu_norm},
                  {"final_tracking_error", m.final_tracking_error},
                  {"max_kkt", m.max_kkt}};
  json as = json::array();
  for (const auto& a : r.assertions) as.push_back({{"name", a.name}, {"passed", a.passed}, {"detail", a.detail}});
  j["assertions"] = as;
  j["passed"] = r.passed();
  j["csv"] = r.csv_path.string();
  if (r.qp_dump_path) j["qp_dump"] = r.qp_dump_path->string();
  return j.dump(2);
}

}  // namespace immpc
