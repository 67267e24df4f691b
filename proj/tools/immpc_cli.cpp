#include "immpc/io.hpp"
#include "immpc/verify.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

using namespace immpc;

namespace {

constexpr int kConfigError = 2;
constexpr int kCheckFailed = 3;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("immpc");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("IMMPC_LOG_LEVEL")) {
    const std::string v = env;
    if (v == "error")
      spdlog::set_level(spdlog::level::err);
    else if (v == "info")
      spdlog::set_level(spdlog::level::info);
    else if (v == "debug")
      spdlog::set_level(spdlog::level::debug);
    else
      spdlog::warn("IMMPC_LOG_LEVEL={} not recognized (error, info, debug); using info", v);
  }
}

std::optional<Index> parse_dump_qp(const std::string& s) {
  if (s.empty()) return std::nullopt;
  const std::string digits = s.rfind("t=", 0) == 0 ? s.substr(2) : s;
  std::size_t used = 0;
  long long t = -1;
  try {
    t = std::stoll(digits, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != digits.size() || t < 0) throw ConfigError("--dump-qp expects t=<step>, got '" + s + "'");
  return static_cast<Index>(t);
}

std::string format_matrix(const MatrixXd& M) {
  std::ostringstream os;
  for (Index i = 0; i < M.rows(); ++i) {
    os << "  ";
    for (Index j = 0; j < M.cols(); ++j) os << fmt::format("{:>12.6g}", M(i, j));
    os << '\n';
  }
  return os.str();
}

struct SimulateOptions {
  std::vector<std::string> configs;
  std::string out = "out";
  std::string dump_qp;
  unsigned jobs = 1;
  std::optional<std::uint64_t> seed;
};

int cmd_simulate(const SimulateOptions& o) {
  // Everything is parsed up front so that a bad file leaves no output behind.
  std::vector<Experiment> experiments;
  std::optional<Index> dump_at;
  try {
    dump_at = parse_dump_qp(o.dump_qp);
    for (const auto& path : o.configs) {
      experiments.push_back(load_experiment(path));
      if (o.seed) experiments.back().scenario.seed = *o.seed;
    }
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfigError;
  }

  std::vector<std::optional<RunReport>> reports(experiments.size());
  std::vector<std::string> errors(experiments.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < experiments.size(); i = next++) {
      const auto& sc = experiments[i].scenario;
      {
        std::lock_guard lock(log_mutex);
        spdlog::info("running {} ({} steps)", sc.name, sc.steps);
      }
      try {
        reports[i] = simulate_experiment(experiments[i], o.out, dump_at);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const unsigned jobs = std::max(1u, std::min<unsigned>(o.jobs, static_cast<unsigned>(experiments.size())));
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  int status = 0;
  for (std::size_t i = 0; i < experiments.size(); ++i) {
    if (!reports[i]) {
      spdlog::error("{}: {}", experiments[i].scenario.name, errors[i]);
      status = kCheckFailed;
      continue;
    }
    const RunReport& r = *reports[i];
    fmt::print("{}: {} (converged: {}, hash {}, {:.2f} s)\n", r.scenario, r.passed() ? "passed" : "FAILED",
               r.converged, r.scenario_hash, r.runtime_s);
    for (const auto& a : r.assertions) fmt::print("  {} {}: {}\n", a.passed ? "ok  " : "FAIL", a.name, a.detail);
    fmt::print("  csv {}\n  report {}\n", r.csv_path.string(), r.report_path.string());
    if (r.qp_dump_path) fmt::print("  qp {}\n", r.qp_dump_path->string());
    if (dump_at && !r.qp_dump_path) spdlog::warn("{}: step {} was not reached, no QP written", r.scenario, *dump_at);
    spdlog::debug("{}", report_json(r));
    if (!r.passed()) status = kCheckFailed;
  }
  return status;
}

int cmd_design(const std::string& path) {
  Experiment ex;
  try {
    ex = load_experiment(path);
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfigError;
  }
  const MPCConfig& cfg = ex.scenario.controller;
  bool ok = true;

  const auto& pc = cfg.Gx.denominator().coefficients();
  std::vector<std::string> coeffs;
  for (Index i = 0; i < pc.size(); ++i) coeffs.push_back(fmt::format("{:.6g}", pc(i) == 0 ? 0.0 : pc(i)));
  fmt::print("p = [{}]\n", fmt::join(coeffs, ", "));
  fmt::print("generator: {} frequencies{}, reference frequencies {}\n", cfg.gen.pairs(),
             cfg.gen.has_constant() ? " plus constant" : "", cfg.gen_a.pairs());
  fmt::print("numerator degrees: n_d,x = {}, n_d,u = {}\n", cfg.ndx(), cfg.ndu());

  const auto report = cancellation_check(cfg.plant, cfg.Gx, cfg.Gu);
  if (report.ok) {
    fmt::print("cancellation check: ok\n");
  } else {
    ok = false;
    fmt::print("cancellation check: FAILED\n");
    for (const auto& issue : report.issues) fmt::print("  {}\n", issue);
  }

  const auto& tc = cfg.terminal;
  if (tc.trivial()) {
    fmt::print("V_N ≡ 0\n");
  } else {
    auto show = [&](const char* name, const MatrixFractionFilter<double>& G, const MatrixXd& P, const MatrixXd& W) {
      if (P.size() == 0) return;
      const MatrixXd A = companion_realization(G.numerator());
      const MatrixXd Wb = blkdiag(W, G.numerator_degree());
      const double res = lyapunov_residual(A, P, Wb, default_lyapunov_slack(Wb));
      const double lmin = Eigen::SelfAdjointEigenSolver<MatrixXd>(P).eigenvalues().minCoeff();
      const bool good = res <= 1e-9 * std::max(1.0, P.cwiseAbs().maxCoeff()) && lmin > 0;
      ok = ok && good;
      fmt::print("{} (residual {:.2e}, min eigenvalue {:.4g}){}\n{}", name, res, lmin, good ? "" : ": FAILED",
                 format_matrix(P));
    };
    show("P_x", cfg.Gx, tc.Px, cfg.Q);
    show("P_u", cfg.Gu, tc.Pu, cfg.R);
  }

  const auto box = check_polytope(cfg.constraints);
  if (!box.nonempty || !box.bounded) {
    ok = false;
    fmt::print("constraint set: FAILED ({})\n", box.nonempty ? "unbounded" : "empty");
  } else {
    fmt::print("constraint set: nonempty and bounded\n");
  }

  const Index bound = cfg.horizon_bound();
  if (cfg.horizon_ok()) {
    fmt::print("N={} > {}: ok\n", cfg.N, bound);
  } else {
    fmt::print("warning: N={} <= {}: convergence bound violated\n", cfg.N, bound);
    spdlog::warn("convergence bound violated: N={} <= {}", cfg.N, bound);
  }
  return ok ? 0 : kCheckFailed;
}

int cmd_verify(const std::string& suite) {
  SuiteReport r;
  try {
    r = run_suite(suite);
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}; available: {}", e.what(), fmt::join(suite_names(), ", "));
    return kConfigError;
  }
  fmt::print("{}\n", to_json(r));
  for (const auto& c : r.checks)
    if (!c.passed) spdlog::error("{}: {} = {:.3e} exceeds {:.1e}", suite, c.name, c.value, c.tolerance);
  return r.passed() ? 0 : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Internal-model MPC: closed-loop scenarios, controller design and verification suites"};
  app.require_subcommand(1);

  SimulateOptions sim;
  std::uint64_t seed = 0;
  auto* simulate = app.add_subcommand("simulate", "Run experiment files and write CSV traces and reports");
  simulate->add_option("--config", sim.configs, "Experiment file(s)")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", sim.out, "Output directory")->capture_default_str();
  simulate->add_option("--dump-qp", sim.dump_qp, "Write the QP of one step, e.g. t=10");
  simulate->add_option("--jobs", sim.jobs, "Experiments run in parallel")->check(CLI::PositiveNumber);
  auto* seed_opt = simulate->add_option("--seed-override", seed, "Replace the seed of every experiment");

  std::string design_config;
  auto* design = app.add_subcommand("design", "Print the filter, terminal cost and horizon checks of an experiment");
  design->add_option("--config", design_config, "Experiment file")->required()->check(CLI::ExistingFile);

  std::string suite;
  auto* verify = app.add_subcommand("verify", "Run an invariant suite (theorem1, theorem2, velocity, oracle)");
  verify->add_option("suite", suite, "Suite name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*simulate) {
      if (*seed_opt) sim.seed = seed;
      return cmd_simulate(sim);
    }
    if (*design) return cmd_design(design_config);
    if (*verify) return cmd_verify(suite);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kCheckFailed;
  }
  return 0;
}
