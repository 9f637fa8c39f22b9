#pragma once

// Fixed-point construction on the weighted unknown u = v·e^{Kt}: smooth
// operator L(ε) (mollified coefficients, λ^(ε) + K) and remainder R(ε) built
// from (b − b^(ε), f − f^(ε), λ − λ^(ε)).

#include "cordes/conditions.hpp"
#include "cordes/mollify.hpp"
#include "cordes/solver.hpp"

#include <json.hpp>

#include <cmath>
#include <optional>
#include <random>
#include <vector>

namespace cordes {

struct FixedPointOptions {
  double eps = 0.0;               // 0 means 2·max h
  std::optional<double> K;        // unset means auto
  double theta = 1.0;
  double tol = 1e-8;
  int max_iter = 200;
  int divergence_run = 5;
  int trials = 4;                 // random fields for the ‖R(ε)‖ estimate
  std::uint64_t seed = 1;
  NormWeights weights;            // γ aligned with N
  std::vector<int> N;             // zero-based
};

struct FixedPointTrace {
  double eps = 0.0;
  double K = 0.0;
  std::vector<double> increments; // relative Ŷ² increments
  std::vector<double> ratios;     // increment ratios from the third iterate on
  double contraction_est = 0.0;
  double R_estimate = 0.0;
  std::vector<double> K_tried;
  std::vector<double> R_tried;
  bool K_search_failed = false;
  bool converged = false;
  bool diverged = false;
  int iterations = 0;
  double max_diff_direct = 0.0;   // filled by callers that also solve directly
};

inline nlohmann::json to_json(const FixedPointTrace& t) {
  return {{"schema", "v1"},
          {"eps", t.eps},
          {"K", t.K},
          {"K_tried", t.K_tried},
          {"R_tried", t.R_tried},
          {"K_search_failed", t.K_search_failed},
          {"increments", t.increments},
          {"contraction_est", t.contraction_est},
          {"R_estimate", t.R_estimate},
          {"converged", t.converged},
          {"diverged", t.diverged},
          {"iterations", t.iterations},
          {"max_diff_direct", t.max_diff_direct}};
}

/// The pieces of one proof-mirror run on a fixed grid.
class ProofMirror {
public:
  ProofMirror(const CoefficientField& field, const Decomposition& d, const Grid& g, double eps, double theta,
              NormWeights w, std::vector<int> N)
      : field_(field), grid_(g), theta_(theta), weights_(std::move(w)), N_(std::move(N)),
        moll_(field, d, eps, field.domain().box), remainder_(remainder_of(moll_)) {
    complex_ = field.complex_lambda();
    time_dependent_ = remainder_.time_dependent;
    if (!time_dependent_) D_.push_back(assemble_operator<Complex>(remainder_, g, 0.0));
    else
      for (int j = 0; j < g.nt; ++j) D_.push_back(assemble_operator<Complex>(remainder_, g, step_time(g, j, theta)));
  }

  ProofMirror(const ProofMirror&) = delete;
  ProofMirror& operator=(const ProofMirror&) = delete;

  const MollifiedField& mollified() const { return moll_; }
  const Grid& grid() const { return grid_; }

  /// True when the remainder operator vanishes identically on the grid.
  bool remainder_zero() const {
    for (const auto& m : D_)
      if (m.nonZeros() > 0 && m.coeffs().cwiseAbs().maxCoeff() > 0.0) return false;
    return true;
  }

  /// D_h applied with the scheme's time weighting to a space-time field.
  std::vector<CVector> remainder_source(const std::vector<CVector>& u) const {
    std::vector<CVector> out;
    for (int j = 0; j < grid_.nt; ++j) {
      const auto& D = D_[time_dependent_ ? static_cast<std::size_t>(j) : 0];
      const CVector mix = theta_ * u[static_cast<std::size_t>(j)] + (1.0 - theta_) * u[static_cast<std::size_t>(j + 1)];
      out.push_back(D * mix);
    }
    return out;
  }

  /// L(ε) applied to (source, terminal) with λ^(ε) + K.
  std::vector<CVector> solve_smooth(double K, std::vector<CVector> source, CVector terminal, bool complex_mode) const {
    const auto c = source_of(moll_, K);
    return solve_backward(c, grid_, theta_, std::move(source), std::move(terminal), complex_mode || complex_).v;
  }

  double yhat(const std::vector<CVector>& u) const { return discrete_norms(grid_, u, weights_, N_).Yhat2; }

  /// max over `trials` random smooth unit-Ŷ² fields w of ‖R(ε)w‖_{Ŷ²}.
  double estimate_R_norm(double K, int trials, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    double worst = 0.0;
    const int n = grid_.n;
    for (int trial = 0; trial < trials; ++trial) {
      // a few low sine modes per axis with random amplitudes, smooth in time
      constexpr int modes = 3;
      std::vector<double> amp(static_cast<std::size_t>(std::pow(modes, n)) * 2);
      for (auto& a : amp) a = normal(rng);
      std::vector<CVector> w;
      std::vector<double> x(static_cast<std::size_t>(n));
      for (int j = 0; j <= grid_.nt; ++j) {
        const double s = grid_.time(j) / grid_.T;
        w.push_back(sample(grid_, [&](std::span<const double> y) {
          double v = 0.0;
          std::size_t c = 0;
          std::vector<int> k(static_cast<std::size_t>(n), 0);
          for (;;) {
            double basis = 1.0;
            for (int a = 0; a < n; ++a) {
              const auto ua = static_cast<std::size_t>(a);
              basis *= std::sin((k[ua] + 1) * M_PI * (y[ua] - grid_.box.lo[ua]) / (grid_.box.hi[ua] - grid_.box.lo[ua]));
            }
            v += (amp[2 * c] + amp[2 * c + 1] * s) * basis;
            ++c;
            int a = 0;
            while (a < n && ++k[static_cast<std::size_t>(a)] == modes) k[static_cast<std::size_t>(a++)] = 0;
            if (a == n) break;
          }
          return Complex(v, 0.0);
        }));
      }
      const double norm = yhat(w);
      if (norm == 0.0) continue;
      for (auto& s : w) s /= norm;
      const auto Rw = solve_smooth(K, remainder_source(w), CVector::Zero(static_cast<Eigen::Index>(grid_.size())), false);
      worst = std::max(worst, yhat(Rw));
    }
    return worst;
  }

private:
  const CoefficientField& field_;
  Grid grid_;
  double theta_;
  NormWeights weights_;
  std::vector<int> N_;
  MollifiedField moll_;
  CoefficientSource remainder_;
  std::vector<SpMat<Complex>> D_;
  bool complex_ = false;
  bool time_dependent_ = false;
};

/// Auto policy: K = sup|λ| + sup|f|²/δ + 1, doubled until ‖R(ε)‖ < 0.95 (at most 6 doublings).
inline double choose_K(const ProofMirror& pm, const CoefficientField& field, double delta, const FixedPointOptions& o,
                       FixedPointTrace& trace) {
  const auto sup = field.bounds(default_sampling(field));
  double K = sup.lambda + sup.f * sup.f / delta + 1.0;
  for (int k = 0; k <= 6; ++k) {
    const double r = pm.estimate_R_norm(K, o.trials, o.seed);
    trace.K_tried.push_back(K);
    trace.R_tried.push_back(r);
    if (r < 0.95) return K;
    if (k < 6) K *= 2.0;
  }
  trace.K_search_failed = true;
  return K;
}

struct FixedPointResult {
  DiscreteSolution solution;
  FixedPointTrace trace;
};

/// u_{m+1} = L(ε)[φ e^{Kt} + D_h u_m] with terminal Φ e^{KT}, from u_0 = 0;
/// returns v = u e^{−Kt}.
inline FixedPointResult fixed_point_solve(const CoefficientField& field, const Decomposition& d, const BackwardProblem& p,
                                          const Grid& g, FixedPointOptions o) {
  double hmax = 0.0;
  for (double h : g.h) hmax = std::max(hmax, h);
  if (o.eps <= 0.0) o.eps = 2.0 * hmax;
  if (o.N.empty() && !d.N.empty()) o.N = d.N;
  if (o.weights.gamma.size() != o.N.size()) {
    if (d.gamma.size() == o.N.size()) o.weights.gamma = d.gamma;
    else o.weights.gamma.assign(o.N.size(), 1.0);
  }
  FixedPointResult res;
  auto& tr = res.trace;
  tr.eps = o.eps;
  ProofMirror pm(field, d, g, o.eps, o.theta, o.weights, o.N);

  double delta = 1.0;
  try {
    delta = ellipticity_delta(d.bbar_samples);
  } catch (const ConditionError&) {
  }
  tr.K = o.K ? *o.K : choose_K(pm, field, delta, o, tr);
  if (o.K) tr.R_estimate = pm.estimate_R_norm(tr.K, o.trials, o.seed);
  else tr.R_estimate = tr.R_tried.back();

  const double K = tr.K;
  auto phibar = sample_source(g, p.phi, o.theta);
  for (int j = 0; j < static_cast<int>(phibar.size()); ++j) phibar[static_cast<std::size_t>(j)] *= std::exp(K * step_time(g, j, o.theta));
  CVector terminal = sample_datum(g, p.Phi) * std::exp(K * g.T);
  if (phibar.empty()) phibar.assign(static_cast<std::size_t>(g.nt), CVector::Zero(static_cast<Eigen::Index>(g.size())));
  const bool cm = p.complex_mode();

  std::vector<CVector> u(static_cast<std::size_t>(g.nt + 1), CVector::Zero(static_cast<Eigen::Index>(g.size())));
  const bool trivial = pm.remainder_zero();
  int growing = 0;
  double prev_inc = 0.0;
  for (int it = 0; it < o.max_iter; ++it) {
    auto source = phibar;
    if (!trivial) {
      const auto r = pm.remainder_source(u);
      for (std::size_t j = 0; j < source.size(); ++j) source[j] += r[j];
    }
    auto next = pm.solve_smooth(K, std::move(source), terminal, cm);
    std::vector<CVector> diff(next.size());
    for (std::size_t j = 0; j < next.size(); ++j) diff[j] = next[j] - u[j];
    const double scale = pm.yhat(next);
    const double inc_abs = pm.yhat(diff);
    const double inc = scale > 0.0 ? inc_abs / scale : inc_abs;
    u = std::move(next);
    tr.increments.push_back(inc);
    tr.iterations = it + 1;
    if (it >= 2 && prev_inc > 0.0) tr.ratios.push_back(inc / prev_inc);
    if (trivial || inc < o.tol) {
      tr.converged = true;
      break;
    }
    if (it >= 1 && inc > prev_inc) {
      if (++growing >= o.divergence_run) {
        tr.diverged = true;
        break;
      }
    } else {
      growing = 0;
    }
    prev_inc = inc;
  }
  if (!tr.ratios.empty()) {
    // geometric mean of the observed ratios: the asymptotic rate of the iteration
    double s = 0.0;
    for (double r : tr.ratios) s += std::log(std::max(r, 1e-300));
    tr.contraction_est = std::exp(s / static_cast<double>(tr.ratios.size()));
  }
  if (tr.diverged) tr.contraction_est = std::max(tr.contraction_est, 1.0);

  auto& sol = res.solution;
  sol.grid = g;
  sol.theta = o.theta;
  sol.complex_mode = cm;
  sol.Phi = sample_datum(g, p.Phi);
  sol.phibar = sample_source(g, p.phi, o.theta);
  sol.v.resize(u.size());
  for (int j = 0; j <= g.nt; ++j) sol.v[static_cast<std::size_t>(j)] = u[static_cast<std::size_t>(j)] * std::exp(-K * g.time(j));
  return res;
}

} // namespace cordes
