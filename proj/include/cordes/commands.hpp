#pragma once

// Command-line front end: analyze, solve, simulate, verify, characteristic.
// Exit codes: 0 success, 1 input or runtime error, 2 a quantitative check failed.

#include "cordes/conditions.hpp"
#include "cordes/config.hpp"
#include "cordes/fixed_point.hpp"
#include "cordes/gridio.hpp"
#include "cordes/solver.hpp"
#include "cordes/stochastic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

namespace cordes {

struct CliOptions {
  std::string config;
  std::vector<std::string> sets;
  std::string out = "cordes_out";
  std::optional<std::uint64_t> seed;
  int threads = 0;
  bool proof_mirror = false;
  std::string format = "csv";
};

namespace cli {

using nlohmann::json;

inline Config load_config(const CliOptions& o) {
  Config c = o.config.empty() ? Config{} : Config::load(o.config);
  for (const auto& s : o.sets) c.set(s);
  if (o.seed) c.set("mc.seed = " + std::to_string(*o.seed));
  return c;
}

inline int workers(const CliOptions& o) {
  if (o.threads > 0) return o.threads;
  return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

inline json envelope(const char* command, const Config& c) {
  return {{"schema", "v1"}, {"command", command}, {"config_hash", c.hash()}, {"config", c.to_json()}};
}

inline void write_json(const std::filesystem::path& p, const json& j) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
  os << std::setprecision(17) << j.dump(2) << "\n";
}

inline json complex_json(Complex z) { return {{"re", z.real()}, {"im", z.imag()}}; }

inline json norms_json(const NormBundle& b) {
  return {{"X0", b.X0}, {"X2", b.X2}, {"Xhat2", b.Xhat2}, {"C0", b.C0}, {"C1", b.C1}, {"Y2", b.Y2}, {"Yhat2", b.Yhat2}};
}

/// N and γ for the Ĥ² weights: the condition-A choice (or the user's override).
inline ConditionReport condition_for(const Config& c, const ResolvedProblem& rp) {
  return full_report(rp.field, resolve_split(c, rp.field.dim()), resolve_sampling(c, rp.field));
}

inline int analyze(const CliOptions& o, std::ostream& out) {
  const auto c = load_config(o);
  const auto rp = resolve_problem(c);
  const auto rep = condition_for(c, rp);
  auto j = envelope("analyze", c);
  j["problem"] = rp.name;
  j["report"] = to_json(rep);
  std::filesystem::create_directories(o.out);
  write_json(std::filesystem::path(o.out) / "analyze.json", j);
  out << format_table(rep);
  return rep.exit_code();
}

inline int solve(const CliOptions& o, std::ostream& out) {
  const auto c = load_config(o);
  const auto rp = resolve_problem(c);
  const auto g = resolve_grid(c, rp.field);
  const double theta = resolve_theta(c);
  const auto problem = make_problem(rp.field, rp.data);
  const auto sol = solve_backward(problem, g, theta);
  const auto rep = condition_for(c, rp);
  auto w = resolve_weights(c);
  w.gamma = rep.gamma;

  std::filesystem::create_directories(o.out);
  const std::filesystem::path dir(o.out);
  if (o.format == "bin") {
    std::ofstream os(dir / "solution.bin", std::ios::binary);
    write_binary(os, g, sol.v);
  } else {
    std::ofstream os(dir / "solution.csv");
    write_csv(os, g, sol.v);
  }

  auto j = envelope("solve", c);
  const auto nb = solution_norms(sol, w, rep.N);
  j["problem"] = rp.name;
  j["grid"] = {{"m", g.m}, {"nt", g.nt}, {"h", g.h}, {"dt", g.dt}, {"theta", theta}};
  j["N"] = one_based(rep.N);
  j["gamma"] = rep.gamma;
  j["norms"] = norms_json(nb);
  j["apriori_ratio"] = apriori_ratio(sol, w, rep.N);
  j["v0_center"] = complex_json(sol.v.front()(static_cast<Eigen::Index>(g.size() / 2)));
  j["stats"] = {{"steps", sol.stats.steps},
                {"factorizations", sol.stats.factorizations},
                {"direct", sol.stats.direct},
                {"max_iterations", sol.stats.max_iterations},
                {"max_residual", sol.stats.max_residual}};
  const auto mp = max_principle_check(sol, !rp.field.complex_lambda());
  j["max_principle"] = {{"min", mp.min}, {"verdict", to_string(mp.verdict)}};
  int code = 0;
  out << "solved " << rp.name << " on " << g.size() << " nodes x " << g.nt << " steps; Yhat2 = " << nb.Yhat2 << "\n";
  if (rp.data.exact) {
    double max_err = 0.0;
    std::vector<double> per_slice;
    for (int k = 0; k <= g.nt; ++k) {
      const CVector ex = sample(g, [&](std::span<const double> x) { return Complex(rp.data.exact->eval(x, g.time(k)), 0.0); });
      per_slice.push_back((sol.v[static_cast<std::size_t>(k)] - ex).cwiseAbs().maxCoeff());
      max_err = std::max(max_err, per_slice.back());
    }
    j["exact"] = {{"max_error", max_err}, {"slice_max_error", per_slice}};
    out << "max error vs exact: " << max_err << "\n";
    if (c.has("solve.max_error") && max_err > c.num("solve.max_error")) code = 2;
  }
  if (o.proof_mirror) {
    const auto d = decompose(rp.field, resolve_split(c, rp.field.dim()), resolve_sampling(c, rp.field));
    FixedPointOptions fo;
    fo.theta = theta;
    fo.eps = c.num("fixed_point.eps", 0.0);
    if (c.has("fixed_point.K")) fo.K = c.num("fixed_point.K");
    fo.tol = c.num("fixed_point.tol", fo.tol);
    fo.max_iter = static_cast<int>(c.integer("fixed_point.max_iter", fo.max_iter));
    fo.trials = static_cast<int>(c.integer("fixed_point.trials", fo.trials));
    fo.seed = static_cast<std::uint64_t>(c.integer("mc.seed", 1));
    fo.weights = w;
    fo.N = rep.N;
    auto fr = fixed_point_solve(rp.field, d, problem, g, fo);
    for (int k = 0; k <= g.nt; ++k)
      fr.trace.max_diff_direct = std::max(
          fr.trace.max_diff_direct,
          (fr.solution.v[static_cast<std::size_t>(k)] - sol.v[static_cast<std::size_t>(k)]).cwiseAbs().maxCoeff());
    auto fj = envelope("solve", c);
    fj["fixed_point"] = to_json(fr.trace);
    fj["delta"] = rep.delta;
    fj["nu_hat"] = rep.nu_hat;
    fj["contraction_bound"] = rep.delta > 0.0 ? std::sqrt(rep.nu_hat) / rep.delta : 0.0;
    write_json(dir / "fixed_point.json", fj);
    j["fixed_point"] = {{"converged", fr.trace.converged}, {"contraction_est", fr.trace.contraction_est}};
    out << "proof mirror: K = " << fr.trace.K << ", contraction ~ " << fr.trace.contraction_est
        << (fr.trace.converged ? ", converged" : ", not converged") << "\n";
    if (!fr.trace.converged) code = 2;
  }
  write_json(dir / "solve.json", j);
  return code;
}

inline PathFunctional functional_for(const Config& c, const ResolvedProblem& rp) {
  const auto problem = make_problem(rp.field, rp.data);
  PathFunctional fn;
  fn.source = problem.phi;
  fn.terminal = problem.Phi;
  fn.mode = resolve_killing(c);
  return fn;
}

inline int simulate(const CliOptions& o, std::ostream& out) {
  const auto c = load_config(o);
  const auto rp = resolve_problem(c);
  auto mc = resolve_mc(c);
  mc.workers = workers(o);
  const auto law = resolve_law(c, rp.field);
  const auto e = simulate_paths(SDE(rp.field), law, functional_for(c, rp), mc);

  std::filesystem::create_directories(o.out);
  const std::filesystem::path dir(o.out);
  auto j = envelope("simulate", c);
  j["ensemble"] = summary_json(e);
  j["functional"] = to_json(feynman_kac(e));
  j["survival"] = to_json(survival(e));
  write_json(dir / "simulate.json", j);
  {
    std::ofstream os(dir / "final.csv");
    os << std::setprecision(17) << "path";
    for (int a = 0; a < e.n; ++a) os << ",x" << a + 1;
    os << ",tau,exited,killed\n";
    for (std::size_t p = 0; p < e.M; ++p) {
      os << p;
      for (int a = 0; a < e.n; ++a) os << "," << e.y_final[p * static_cast<std::size_t>(e.n) + static_cast<std::size_t>(a)];
      os << "," << e.tau[p] << "," << int(e.exited[p]) << "," << int(e.killed[p]) << "\n";
    }
  }
  if (!e.trajectories.empty()) {
    std::ofstream os(dir / "paths.csv");
    os << std::setprecision(17) << "path,step,t";
    for (int a = 0; a < e.n; ++a) os << ",x" << a + 1;
    os << "\n";
    for (std::size_t p = 0; p < e.trajectories.size(); ++p) {
      const auto& tr = e.trajectories[p];
      for (int k = 0; k <= e.steps; ++k) {
        os << p << "," << k << "," << k * e.dt;
        for (int a = 0; a < e.n; ++a) os << "," << tr[static_cast<std::size_t>(k * e.n + a)];
        os << "\n";
      }
    }
  }
  const auto F = feynman_kac(e);
  out << "M = " << e.M << ", dt = " << e.dt << ": F = " << F.value << " +- " << F.stderr() << ", survival "
      << survival(e).value.real() << "\n";
  return 0;
}

struct CheckResult {
  std::string name;
  bool applicable = true;
  bool ok = true;
  json details;
};

inline int verify(const CliOptions& o, std::ostream& out) {
  const auto c = load_config(o);
  const auto rp = resolve_problem(c);
  const auto& field = rp.field;
  const auto g = resolve_grid(c, field);
  const double theta = resolve_theta(c);
  auto mc = resolve_mc(c);
  mc.workers = workers(o);
  const auto law = resolve_law(c, field);
  const auto problem = make_problem(field, rp.data);
  std::vector<CheckResult> checks;

  if (c.flag("verify.pairing", true)) {
    const auto r = verify_pairing(field, problem, g, law, mc, c.num("verify.allowance", 0.02), theta);
    checks.push_back({"pairing", true, r.ok, to_json(r)});
  }
  if (c.flag("verify.max_principle", true)) {
    const auto sol = solve_backward(problem, g, theta);
    const auto mp = max_principle_check(sol, !field.complex_lambda());
    checks.push_back({"max_principle", mp.verdict != MaxPrinciple::NotApplicable, mp.verdict != MaxPrinciple::Fail,
                      {{"min", mp.min}, {"verdict", to_string(mp.verdict)}}});
  }
  if (c.flag("verify.density", false)) {
    auto m2 = mc;
    m2.snapshot_steps = {static_cast<int>(std::lround(field.horizon() / mc.dt))};
    PathFunctional fn;
    const auto e = simulate_paths(SDE(field), law, fn, m2);
    const auto adj = solve_forward_adjoint(source_of(field), g, law.on_grid(g), theta);
    const double l1 = density_compare(e, 0, g, adj.p.back());
    const double tol = c.num("verify.density_tol", 0.05);
    checks.push_back({"density", true, l1 <= tol, {{"l1", l1}, {"tol", tol}}});
  }
  if (c.flag("verify.survival", false)) {
    const bool applicable = field.dim() == 1 && !field.domain().all_space && field.constant_coefficients() &&
                            law.kind == InitialLaw::Kind::Point;
    CheckResult r{"survival", applicable, true, {}};
    if (applicable) {
      const auto& box = field.domain().box;
      const auto v = field.eval_raw(law.center, 0.0);
      PathFunctional fn;
      const auto e = simulate_paths(SDE(field), law, fn, mc);
      const auto s = survival(e);
      const double series = survival_series_1d(v.b(0, 0), box.lo[0], box.hi[0], law.center[0], field.horizon());
      const double allow = c.num("verify.survival_allowance", 0.01);
      r.ok = std::abs(s.value.real() - series) <= 3.0 * s.stderr() + allow;
      r.details = {{"mc", to_json(s)}, {"series", series}, {"allowance", allow}};
    }
    checks.push_back(r);
  }
  if (c.flag("verify.killing_rate", false)) {
    const auto sup = field.bounds(default_sampling(field));
    const bool applicable = field.domain().all_space && !field.complex_lambda() && field.lambda_re().is_constant();
    CheckResult r{"killing_rate", applicable, true, {}};
    if (applicable) {
      const double rate = field.lambda_re().eval({}, 0.0);
      PathFunctional fn;
      fn.mode = KillingMode::Clock;
      const auto s = survival(simulate_paths(SDE(field), law, fn, mc));
      const double expect = std::exp(-rate * field.horizon());
      r.ok = std::abs(s.value.real() - expect) <= 3.0 * s.stderr();
      r.details = {{"mc", to_json(s)}, {"expected", expect}, {"sup_lambda", sup.lambda}};
    }
    checks.push_back(r);
  }

  auto j = envelope("verify", c);
  int code = 0;
  for (const auto& r : checks) {
    j["checks"][r.name] = {{"applicable", r.applicable}, {"ok", r.ok}, {"details", r.details}};
    out << std::left << std::setw(14) << r.name << (r.applicable ? (r.ok ? "pass" : "FAIL") : "not applicable") << "\n";
    if (r.applicable && !r.ok) code = 2;
  }
  std::filesystem::create_directories(o.out);
  write_json(std::filesystem::path(o.out) / "verify.json", j);
  return code;
}

inline int characteristic(const CliOptions& o, std::ostream& out) {
  const auto c = load_config(o);
  const auto rp = resolve_problem(c);
  const auto& field = rp.field;
  const auto xis = resolve_xi(c, field.dim());
  if (xis.empty()) throw ConfigError("no xi functions given (xi.<k> or xi.panel)");
  const auto g = resolve_grid(c, field);
  const double theta = resolve_theta(c);
  auto mc = resolve_mc(c);
  mc.workers = workers(o);
  const auto law = resolve_law(c, field);
  const double allow = c.num("xi.allowance", 3e-2);

  auto j = envelope("characteristic", c);
  std::filesystem::create_directories(o.out);
  std::ofstream csv(std::filesystem::path(o.out) / "characteristic.csv");
  csv << std::setprecision(17) << "xi,mc_re,mc_im,stderr,pde_re,pde_im,diff,tol,ok\n";
  int code = 0;
  for (const auto& [label, xi] : xis) {
    const auto m = characteristic_mc(field, law, xi, mc);
    const auto p = characteristic_pde(field, g, law, xi, theta);
    const double diff = std::abs(m.value - p);
    const double tol = 3.0 * m.stderr() + allow;
    const bool ok = diff <= tol;
    if (!ok) code = 2;
    j["panel"].push_back({{"xi", label}, {"mc", to_json(m)}, {"pde", complex_json(p)}, {"diff", diff}, {"tol", tol}, {"ok", ok}});
    csv << '"' << label << '"' << "," << m.value.real() << "," << m.value.imag() << "," << m.stderr() << "," << p.real()
        << "," << p.imag() << "," << diff << "," << tol << "," << (ok ? 1 : 0) << "\n";
    out << std::left << std::setw(24) << label << " mc " << m.value << "  pde " << p << "  " << (ok ? "pass" : "FAIL") << "\n";
  }
  write_json(std::filesystem::path(o.out) / "characteristic.json", j);
  return code;
}

} // namespace cli

/// Runs the command line; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"cordes: coefficient conditions, backward solves and path simulation for second-order parabolic problems"};
  app.require_subcommand(1);
  CliOptions o;
  auto common = [&](CLI::App* s, bool mc) {
    s->add_option("-c,--config", o.config, "configuration file (key = value)")->check(CLI::ExistingFile);
    s->add_option("--set", o.sets, "override one entry, e.g. --set grid.m=63")->take_all();
    s->add_option("-o,--out", o.out, "output directory")->capture_default_str();
    if (mc) {
      s->add_option("--seed", o.seed, "random seed (overrides mc.seed)");
      s->add_option("--threads", o.threads, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    }
  };
  auto* analyze = app.add_subcommand("analyze", "condition A and the classical checks");
  common(analyze, false);
  auto* solve = app.add_subcommand("solve", "backward θ-scheme solve");
  common(solve, true);
  solve->add_flag("--proof-mirror", o.proof_mirror, "also run the mollified fixed-point construction");
  solve->add_option("--format", o.format, "solution file format")->check(CLI::IsMember({"csv", "bin"}))->capture_default_str();
  auto* simulate = app.add_subcommand("simulate", "Euler–Maruyama path ensemble");
  common(simulate, true);
  auto* verify = app.add_subcommand("verify", "PDE against Monte Carlo checks");
  common(verify, true);
  auto* characteristic = app.add_subcommand("characteristic", "characteristic functional by both routes");
  common(characteristic, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? 0 : 1;
  }
  try {
    if (*analyze) return cli::analyze(o, out);
    if (*solve) return cli::solve(o, out);
    if (*simulate) return cli::simulate(o, out);
    if (*verify) return cli::verify(o, out);
    if (*characteristic) return cli::characteristic(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

} // namespace cordes
