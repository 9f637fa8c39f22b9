#pragma once

// Euler–Maruyama simulation of dy = f dt + β dw killed at ∂D and discounted
// by λ, with Feynman–Kac, density and characteristic-functional estimators.

#include "cordes/field.hpp"
#include "cordes/grid.hpp"
#include "cordes/rng.hpp"
#include "cordes/solver.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <complex>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

namespace cordes {

class SimulationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Pairwise (tree) summation in index order; independent of how the inputs were produced.
template <class T>
T pairwise_sum(std::span<const T> v) {
  if (v.size() <= 32) {
    T s{};
    for (const auto& x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

/// Initial law ρ with a sampler and a matching density.
struct InitialLaw {
  enum class Kind { Point, Uniform, Gaussian, Hat };
  Kind kind = Kind::Point;
  std::vector<double> center;
  double sd = 1.0;     // Gaussian
  double width = 0.1;  // Hat half-width
  Box box;             // Uniform support, or truncation box for Gaussian
  bool truncated = false;

  static InitialLaw point(std::vector<double> a) { return {Kind::Point, std::move(a), 1.0, 0.1, {}, false}; }
  static InitialLaw uniform(Box b) {
    std::vector<double> c;
    for (std::size_t i = 0; i < b.lo.size(); ++i) c.push_back(0.5 * (b.lo[i] + b.hi[i]));
    return {Kind::Uniform, std::move(c), 1.0, 0.1, std::move(b), false};
  }
  static InitialLaw gaussian(std::vector<double> c, double sd, std::optional<Box> trunc = std::nullopt) {
    InitialLaw l{Kind::Gaussian, std::move(c), sd, 0.1, {}, false};
    if (trunc) l.box = *trunc, l.truncated = true;
    return l;
  }
  static InitialLaw hat(std::vector<double> c, double w) { return {Kind::Hat, std::move(c), 1.0, w, {}, false}; }

  int dim() const { return static_cast<int>(center.size()); }

  void sample(PathStream& s, std::span<double> out) const {
    const int n = dim();
    switch (kind) {
    case Kind::Point:
      std::copy(center.begin(), center.end(), out.begin());
      return;
    case Kind::Uniform:
      for (int i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        out[ui] = box.lo[ui] + (box.hi[ui] - box.lo[ui]) * s.uniform(static_cast<std::uint64_t>(i));
      }
      return;
    case Kind::Hat:
      for (int i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        out[ui] = center[ui] + width * (s.uniform(2 * ui) + s.uniform(2 * ui + 1) - 1.0);
      }
      return;
    case Kind::Gaussian:
      for (std::uint64_t attempt = 0; attempt < 10000; ++attempt) {
        for (int i = 0; i < n; ++i) {
          const auto ui = static_cast<std::size_t>(i);
          out[ui] = center[ui] + sd * s.normal(attempt * static_cast<std::uint64_t>(n) + ui);
        }
        if (!truncated || box.interior(out)) return;
      }
      throw SimulationError("truncated Gaussian: rejection sampling failed");
    }
  }

  double density(std::span<const double> x) const {
    const int n = dim();
    switch (kind) {
    case Kind::Point: return 0.0;
    case Kind::Uniform: return box.interior(x) ? 1.0 / box.volume() : 0.0;
    case Kind::Hat: {
      double d = 1.0;
      for (int i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const double u = std::abs(x[ui] - center[ui]) / width;
        d *= u < 1.0 ? (1.0 - u) / width : 0.0;
      }
      return d;
    }
    case Kind::Gaussian: {
      if (truncated && !box.interior(x)) return 0.0;
      double d = 1.0;
      for (int i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const double z = (x[ui] - center[ui]) / sd;
        d *= std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * M_PI));
        if (truncated) {
          const double a = (box.lo[ui] - center[ui]) / (sd * std::sqrt(2.0));
          const double b = (box.hi[ui] - center[ui]) / (sd * std::sqrt(2.0));
          d /= 0.5 * (std::erf(b) - std::erf(a));
        }
      }
      return d;
    }
    }
    return 0.0;
  }

  /// Density at the grid nodes; a point mass goes to the nearest node.
  CVector on_grid(const Grid& g) const {
    if (kind != Kind::Point) return cordes::sample(g, [&](std::span<const double> x) { return Complex(density(x), 0.0); });
    CVector v = CVector::Zero(static_cast<Eigen::Index>(g.size()));
    std::size_t p = 0;
    for (int a = 0; a < g.n; ++a) {
      const auto ua = static_cast<std::size_t>(a);
      int i = static_cast<int>(std::lround((center[ua] - g.box.lo[ua]) / g.h[ua])) - 1;
      i = std::clamp(i, 0, g.m[ua] - 1);
      p += static_cast<std::size_t>(i) * g.stride[ua];
    }
    v(static_cast<Eigen::Index>(p)) = 1.0 / g.cell_volume();
    return v;
  }
};

/// How λ removes mass: as a weight e^{−∫λ} or by an exponential clock (real λ ≥ 0).
enum class KillingMode { Weight, Clock };

struct PathFunctional {
  SourceFn killing;  // empty means the field's λ
  SourceFn source;   // φ; empty means 0
  DatumFn terminal;  // Φ; empty means 0
  KillingMode mode = KillingMode::Weight;
};

struct SimulationOptions {
  double dt = 1e-3;
  std::size_t M = 1000;
  std::uint64_t seed = 1;
  int workers = 1;
  std::vector<int> snapshot_steps; // step indices k (time k·dt) to record states at
  std::size_t keep_paths = 0;      // full trajectories stored for the first paths (≤ 1000)
};

struct PathEnsemble {
  std::size_t M = 0;
  int n = 0;
  int steps = 0;
  double dt = 0.0, T = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> y_final;      // M·n
  std::vector<double> tau;          // exit/kill time, T when the path never left
  std::vector<char> exited, killed;
  std::vector<Complex> discount;    // ∫ λ ds over the lifetime within [0, T]
  std::vector<Complex> source;      // ∫ φ e^{−∫λ} dt
  std::vector<Complex> terminal;    // Φ(y(T)) e^{−∫λ} for paths alive at T
  std::vector<int> snapshot_steps;
  std::vector<std::vector<double>> snapshots; // per snapshot, M·n (NaN once dead)
  std::vector<std::vector<double>> trajectories;

  bool alive_at_T(std::size_t p) const { return !killed[p] && !exited[p]; }
  std::size_t survived() const {
    std::size_t s = 0;
    for (std::size_t p = 0; p < M; ++p) s += alive_at_T(p) ? 1 : 0;
    return s;
  }
  double mean_tau() const {
    std::vector<double> t(tau.begin(), tau.end());
    for (auto& v : t) v = std::min(v, T);
    return M ? pairwise_sum<double>(t) / static_cast<double>(M) : 0.0;
  }
};

inline nlohmann::json summary_json(const PathEnsemble& e) {
  return {{"schema", "v1"}, {"M", e.M}, {"dt", e.dt}, {"seed", e.seed}, {"survived", e.survived()}, {"mean_tau", e.mean_tau()}};
}

/// dy = f dt + β dw on [0, T], β from the field (or the symmetric root of 2b).
class SDE {
public:
  explicit SDE(const CoefficientField& field) : field_(&field) {
    const int n = field.dim();
    constant_ = field.constant_coefficients();
    if (constant_) {
      std::vector<double> x(static_cast<std::size_t>(n), 0.0);
      for (int a = 0; a < n; ++a) x[static_cast<std::size_t>(a)] = 0.5 * (field.domain().box.lo[static_cast<std::size_t>(a)] + field.domain().box.hi[static_cast<std::size_t>(a)]);
      const auto v = field.eval_raw(x, 0.0);
      f_ = v.f;
      lambda_ = v.lambda;
      beta_ = field.has_beta() ? field.beta_at(x, 0.0) : symmetric_sqrt(2.0 * v.b);
      if ((0.5 * beta_ * beta_.transpose() - v.b).cwiseAbs().maxCoeff() > 1e-12)
        throw SimulationError("b differs from beta*beta^T/2");
    }
  }

  const CoefficientField& field() const { return *field_; }
  int dim() const { return field_->dim(); }

  void drift_diffusion(std::span<const double> y, double t, Vector& f, Matrix& beta, Complex& lambda) const {
    if (constant_) {
      f = f_;
      beta = beta_;
      lambda = lambda_;
      return;
    }
    const auto v = field_->eval_raw(y, t);
    f = v.f;
    lambda = v.lambda;
    beta = field_->has_beta() ? field_->beta_at(y, t) : symmetric_sqrt(2.0 * v.b);
  }

private:
  const CoefficientField* field_;
  bool constant_ = false;
  Vector f_;
  Matrix beta_;
  Complex lambda_;
};

namespace detail {

inline void simulate_range(const SDE& sde, const InitialLaw& law, const PathFunctional& fn, const SimulationOptions& o,
                           PathEnsemble& e, std::size_t begin, std::size_t end) {
  const int n = sde.dim();
  const auto& dom = sde.field().domain();
  const double sq = std::sqrt(o.dt);
  std::vector<double> y(static_cast<std::size_t>(n));
  Vector f(n), xi(n), step(n);
  Matrix beta(n, n);
  Complex lam;
  for (std::size_t p = begin; p < end; ++p) {
    PathStream noise(o.seed, p, 0), init(o.seed, p, 1);
    law.sample(init, y);
    const double clock = fn.mode == KillingMode::Clock ? -std::log(init.uniform(1u << 20)) : 0.0;
    Complex I{0.0, 0.0}, S{0.0, 0.0};
    bool alive = true, exited = false, killed = false;
    double tau = e.T;
    if (!dom.inside(y)) alive = false, exited = true, tau = 0.0;
    std::size_t snap = 0;
    const bool keep = p < e.trajectories.size();
    auto record = [&](int k) {
      while (snap < e.snapshot_steps.size() && e.snapshot_steps[snap] == k) {
        for (int a = 0; a < n; ++a)
          e.snapshots[snap][p * static_cast<std::size_t>(n) + static_cast<std::size_t>(a)] =
              alive ? y[static_cast<std::size_t>(a)] : std::numeric_limits<double>::quiet_NaN();
        ++snap;
      }
      if (keep)
        for (int a = 0; a < n; ++a) e.trajectories[p][static_cast<std::size_t>(k * n + a)] = y[static_cast<std::size_t>(a)];
    };
    int k = 0;
    for (; k < e.steps && alive; ++k) {
      record(k);
      const double t = k * o.dt;
      sde.drift_diffusion(y, t, f, beta, lam);
      if (fn.killing) lam = fn.killing(y, t);
      const Complex weight = fn.mode == KillingMode::Weight ? std::exp(-I) : Complex(1.0, 0.0);
      if (fn.source) S += fn.source(y, t) * weight * o.dt;
      I += lam * o.dt;
      if (fn.mode == KillingMode::Clock && I.real() >= clock) {
        alive = false, killed = true, tau = t + o.dt;
        break;
      }
      for (int a = 0; a < n; ++a) xi(a) = noise.normal(static_cast<std::uint64_t>(k) * static_cast<std::uint64_t>(n) + static_cast<std::uint64_t>(a));
      step.noalias() = beta * xi;
      for (int a = 0; a < n; ++a) y[static_cast<std::size_t>(a)] += f(a) * o.dt + step(a) * sq;
      if (!dom.inside(y)) {
        alive = false, exited = true, tau = t + o.dt;
        ++k;
        break;
      }
    }
    for (; k <= e.steps; ++k) record(k);
    std::copy(y.begin(), y.end(), e.y_final.begin() + static_cast<std::ptrdiff_t>(p * static_cast<std::size_t>(n)));
    e.tau[p] = tau;
    e.exited[p] = exited;
    e.killed[p] = killed;
    e.discount[p] = I;
    e.source[p] = S;
    Complex term{0.0, 0.0};
    if (!killed && !exited && fn.terminal) {
      term = fn.terminal(y);
      if (fn.mode == KillingMode::Weight) term *= std::exp(-I);
    }
    e.terminal[p] = term;
  }
}

} // namespace detail

inline PathEnsemble simulate_paths(const SDE& sde, const InitialLaw& law, const PathFunctional& fn, SimulationOptions o) {
  if (!(o.dt > 0.0)) throw SimulationError("dt must be positive");
  if (o.M < 1) throw SimulationError("M must be >= 1");
  if (law.dim() != sde.dim()) throw SimulationError("initial law dimension mismatch");
  PathEnsemble e;
  e.M = o.M;
  e.n = sde.dim();
  e.T = sde.field().horizon();
  e.steps = static_cast<int>(std::lround(e.T / o.dt));
  if (e.steps < 1) throw SimulationError("dt exceeds the horizon");
  e.dt = e.T / e.steps;
  o.dt = e.dt;
  e.seed = o.seed;
  const auto nn = static_cast<std::size_t>(e.n);
  e.y_final.assign(o.M * nn, 0.0);
  e.tau.assign(o.M, 0.0);
  e.exited.assign(o.M, 0);
  e.killed.assign(o.M, 0);
  e.discount.assign(o.M, {});
  e.source.assign(o.M, {});
  e.terminal.assign(o.M, {});
  e.snapshot_steps = o.snapshot_steps;
  std::sort(e.snapshot_steps.begin(), e.snapshot_steps.end());
  for (int s : e.snapshot_steps)
    if (s < 0 || s > e.steps) throw SimulationError("snapshot step out of range");
  e.snapshots.assign(e.snapshot_steps.size(), std::vector<double>(o.M * nn, 0.0));
  e.trajectories.assign(std::min<std::size_t>({o.keep_paths, o.M, 1000}),
                        std::vector<double>(static_cast<std::size_t>(e.steps + 1) * nn, std::numeric_limits<double>::quiet_NaN()));

  const int workers = std::max(1, std::min<int>(o.workers, static_cast<int>(o.M)));
  if (workers == 1) {
    detail::simulate_range(sde, law, fn, o, e, 0, o.M);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      const std::size_t b = o.M * static_cast<std::size_t>(w) / static_cast<std::size_t>(workers);
      const std::size_t en = o.M * static_cast<std::size_t>(w + 1) / static_cast<std::size_t>(workers);
      pool.emplace_back([&, b, en, w] {
        try {
          detail::simulate_range(sde, law, fn, o, e, b, en);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& err : errors)
      if (err) std::rethrow_exception(err);
  }
  return e;
}

struct Estimate {
  Complex value{0.0, 0.0};
  double stderr_re = 0.0, stderr_im = 0.0;
  std::size_t M = 0;

  double stderr() const { return std::hypot(stderr_re, stderr_im); }
};

inline nlohmann::json to_json(const Estimate& e) {
  return {{"re", e.value.real()}, {"im", e.value.imag()}, {"stderr", e.stderr()}, {"stderr_re", e.stderr_re},
          {"stderr_im", e.stderr_im}, {"M", e.M}};
}

/// Mean and standard error of per-path samples, with pairwise sums.
inline Estimate estimate(const std::vector<Complex>& x) {
  Estimate est;
  est.M = x.size();
  if (x.empty()) throw SimulationError("empty ensemble");
  const auto M = static_cast<double>(x.size());
  est.value = pairwise_sum<Complex>(x) / M;
  if (x.size() > 1) {
    std::vector<double> dr(x.size()), di(x.size());
    for (std::size_t p = 0; p < x.size(); ++p) {
      dr[p] = std::pow(x[p].real() - est.value.real(), 2);
      di[p] = std::pow(x[p].imag() - est.value.imag(), 2);
    }
    est.stderr_re = std::sqrt(pairwise_sum<double>(dr) / (M - 1.0) / M);
    est.stderr_im = std::sqrt(pairwise_sum<double>(di) / (M - 1.0) / M);
  }
  return est;
}

/// F = E[Φ(y(T)) e^{−∫λ} χ{τ≥T} + ∫ φ e^{−∫λ} dt].
inline Estimate feynman_kac(const PathEnsemble& e) {
  std::vector<Complex> x(e.M);
  for (std::size_t p = 0; p < e.M; ++p) x[p] = e.terminal[p] + e.source[p];
  return estimate(x);
}

/// Fraction of paths alive at T.
inline Estimate survival(const PathEnsemble& e) {
  std::vector<Complex> x(e.M);
  for (std::size_t p = 0; p < e.M; ++p) x[p] = e.alive_at_T(p) ? 1.0 : 0.0;
  return estimate(x);
}

/// Σ_cells |p̂ − p|·h^n with bins centred at the grid nodes; p̂ counts live paths / (M·h^n).
inline double density_compare(const PathEnsemble& e, std::size_t snapshot, const Grid& g, const CVector& p) {
  if (e.M == 0) throw SimulationError("empty ensemble");
  if (snapshot >= e.snapshots.size()) throw SimulationError("no such snapshot");
  if (g.n != e.n) throw SimulationError("grid dimension mismatch");
  std::vector<double> counts(g.size(), 0.0);
  const auto& s = e.snapshots[snapshot];
  for (std::size_t q = 0; q < e.M; ++q) {
    std::size_t idx = 0;
    bool ok = true;
    for (int a = 0; a < g.n && ok; ++a) {
      const auto ua = static_cast<std::size_t>(a);
      const double y = s[q * static_cast<std::size_t>(g.n) + ua];
      if (std::isnan(y)) ok = false;
      else {
        const double u = (y - g.box.lo[ua]) / g.h[ua] - 0.5; // cell i spans nodes i±½
        const int i = static_cast<int>(std::floor(u));
        if (i < 0 || i >= g.m[ua]) ok = false;
        else idx += static_cast<std::size_t>(i) * g.stride[ua];
      }
    }
    if (ok) counts[idx] += 1.0;
  }
  const double vol = g.cell_volume();
  double l1 = 0.0;
  for (std::size_t q = 0; q < g.size(); ++q)
    l1 += std::abs(counts[q] / (static_cast<double>(e.M) * vol) - p(static_cast<Eigen::Index>(q)).real()) * vol;
  return l1;
}

/// Fraction of live paths at a snapshot, with its binomial standard error.
inline Estimate snapshot_mass(const PathEnsemble& e, std::size_t snapshot) {
  std::vector<Complex> x(e.M);
  const auto& s = e.snapshots.at(snapshot);
  for (std::size_t q = 0; q < e.M; ++q) x[q] = std::isnan(s[q * static_cast<std::size_t>(e.n)]) ? 0.0 : 1.0;
  return estimate(x);
}

struct PairingReport {
  Complex pde{0.0, 0.0};
  Estimate mc;
  double diff = 0.0;
  double allowance = 0.0;
  bool ok = false;
  double rho_H0 = 0.0, phi_X0 = 0.0, Phi_H1 = 0.0;
};

inline nlohmann::json to_json(const PairingReport& r) {
  return {{"pde", {{"re", r.pde.real()}, {"im", r.pde.imag()}}},
          {"mc", to_json(r.mc)},
          {"diff", r.diff},
          {"allowance", r.allowance},
          {"ok", r.ok},
          {"bound", {{"rho_H0", r.rho_H0}, {"phi_X0", r.phi_X0}, {"Phi_H1", r.Phi_H1}}}};
}

/// Both sides of F = (v(·,0), ρ): grid pairing from the backward solve and the path functional.
inline PairingReport verify_pairing(const CoefficientField& field, const BackwardProblem& problem, const Grid& g,
                                    const InitialLaw& law, const SimulationOptions& o, double allowance, double theta = 1.0) {
  PairingReport r;
  const auto sol = solve_backward(problem, g, theta);
  const CVector rho = law.on_grid(g);
  r.pde = pair(g, sol.v.front(), rho);
  PathFunctional fn;
  fn.source = problem.phi;
  fn.terminal = problem.Phi;
  const auto ens = simulate_paths(SDE(field), law, fn, o);
  r.mc = feynman_kac(ens);
  r.diff = std::abs(r.pde - r.mc.value);
  r.allowance = allowance;
  r.ok = r.diff <= 3.0 * r.mc.stderr() + allowance;
  r.rho_H0 = l2(g, rho);
  r.phi_X0 = x0_norm(g, sol.phibar);
  r.Phi_H1 = std::hypot(l2(g, sol.Phi), h1_seminorm(g, sol.Phi));
  return r;
}

enum class MaxPrinciple { Pass, Fail, NotApplicable };

struct MaxPrincipleResult {
  double min = 0.0;
  MaxPrinciple verdict = MaxPrinciple::NotApplicable;
};

inline const char* to_string(MaxPrinciple v) {
  return v == MaxPrinciple::Pass ? "pass" : v == MaxPrinciple::Fail ? "fail" : "not applicable";
}

/// min over nodes/slices of v; applicable when λ is real and φ, Φ ≥ 0 on the grid.
inline MaxPrincipleResult max_principle_check(const DiscreteSolution& s, bool lambda_real) {
  MaxPrincipleResult r;
  bool applicable = lambda_real && !s.complex_mode && (s.Phi.size() == 0 || s.Phi.real().minCoeff() >= 0.0);
  for (const auto& f : s.phibar) applicable = applicable && f.real().minCoeff() >= 0.0;
  r.min = std::numeric_limits<double>::infinity();
  for (const auto& v : s.v) r.min = std::min(r.min, v.real().minCoeff());
  if (!applicable) return r;
  r.verdict = r.min >= -1e-10 ? MaxPrinciple::Pass : MaxPrinciple::Fail;
  return r;
}

using XiFn = std::function<std::vector<double>(double)>;

inline double xi_dot_arctan(const XiFn& xi, std::span<const double> x, double t) {
  const auto v = xi(t);
  double s = 0.0;
  for (std::size_t a = 0; a < v.size(); ++a) s += v[a] * std::atan(x[a]);
  return s;
}

/// E exp{−i ∫ ξ(t)ᵀ arctan y(t) dt}, rectangle rule on the simulation steps.
inline Estimate characteristic_mc(const CoefficientField& field, const InitialLaw& law, const XiFn& xi,
                                  SimulationOptions o) {
  PathFunctional fn;
  fn.killing = [&xi](std::span<const double> x, double t) { return Complex(0.0, xi_dot_arctan(xi, x, t)); };
  fn.terminal = [](std::span<const double>) { return Complex(1.0, 0.0); };
  return feynman_kac(simulate_paths(SDE(field), law, fn, o));
}

/// 1 − i·(V(·,0), ρ) with V solving the backward problem for φ = ξᵀarctan x, λ = iφ, Φ = 0.
inline Complex characteristic_pde(const CoefficientField& field, const Grid& g, const InitialLaw& law, const XiFn& xi,
                                  double theta = 1.0) {
  BackwardProblem p;
  p.coeffs = {field.dim(),
              [&field, &xi](std::span<const double> x, double t) {
                auto v = field.eval(x, t);
                v.lambda = Complex(0.0, xi_dot_arctan(xi, x, t));
                return v;
              },
              true, true};
  p.phi = [&xi](std::span<const double> x, double t) { return Complex(xi_dot_arctan(xi, x, t), 0.0); };
  p.complex_phi = false;
  const auto sol = solve_backward(p, g, theta);
  return Complex(1.0, 0.0) - Complex(0.0, 1.0) * pair(g, sol.v.front(), law.on_grid(g));
}

/// Survival of dy = √(2b) dw started at a in (lo, hi), absorbed at the ends: sine series, `terms` modes.
inline double survival_series_1d(double b, double lo, double hi, double a, double T, int terms = 50) {
  const double L = hi - lo;
  double s = 0.0;
  for (int k = 1; k <= terms; ++k) {
    const double c = 2.0 * (1.0 - std::cos(k * M_PI)) / (k * M_PI);
    s += c * std::sin(k * M_PI * (a - lo) / L) * std::exp(-b * std::pow(k * M_PI / L, 2) * T);
  }
  return s;
}

} // namespace cordes
