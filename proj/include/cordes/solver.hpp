#pragma once

// θ-scheme for the backward problem ∂v/∂t + A v = −φ, v = 0 on ∂D, v(T) = Φ,
// and the exact discrete adjoint (forward density) recursion.

#include "cordes/field.hpp"
#include "cordes/grid.hpp"
#include "cordes/linsolve.hpp"
#include "cordes/mollify.hpp"
#include "cordes/problems.hpp"

#include <Eigen/Sparse>

#include <cmath>
#include <complex>
#include <functional>
#include <span>
#include <type_traits>
#include <vector>

namespace cordes {

using PointFn = std::function<CoefficientValues(std::span<const double>, double)>;
using SourceFn = std::function<Complex(std::span<const double>, double)>;
using DatumFn = std::function<Complex(std::span<const double>)>;

/// Coefficients of A as seen by the discretization.
struct CoefficientSource {
  int n = 0;
  PointFn eval;
  bool time_dependent = false;
  bool complex = false;
};

inline CoefficientSource source_of(const CoefficientField& f) {
  return {f.dim(), [&f](std::span<const double> x, double t) { return f.eval(x, t); }, f.time_dependent(),
          f.complex_lambda()};
}

/// b^(ε), f^(ε), λ^(ε) + K.
inline CoefficientSource source_of(const MollifiedField& m, double K) {
  const auto& f = m.field();
  return {f.dim(),
          [&m, K](std::span<const double> x, double t) {
            auto v = m.eval(x, t);
            v.lambda += K;
            return v;
          },
          f.time_dependent() || m.decomposition().bbar_time_dependent(), f.complex_lambda()};
}

/// (b − b^(ε), f − f^(ε), λ − λ^(ε)): the part of A moved to the right-hand side.
inline CoefficientSource remainder_of(const MollifiedField& m) {
  const auto& f = m.field();
  return {f.dim(),
          [&m, &f](std::span<const double> x, double t) {
            auto a = f.eval(x, t);
            const auto s = m.eval(x, t);
            a.b -= s.b;
            a.f -= s.f;
            a.lambda -= s.lambda;
            return a;
          },
          f.time_dependent() || m.decomposition().bbar_time_dependent(), f.complex_lambda()};
}

struct BackwardProblem {
  CoefficientSource coeffs;
  SourceFn phi;          // empty means 0
  DatumFn Phi;           // empty means 0
  bool complex_phi = false;

  bool complex_mode() const { return coeffs.complex || complex_phi; }
};

/// φ = phi_re + i·phi_im, Φ from the problem data.
inline BackwardProblem make_problem(const CoefficientField& field, const ProblemData& data) {
  BackwardProblem p;
  p.coeffs = source_of(field);
  const bool zero_re = data.phi_re.is_constant() && data.phi_re.eval({}, 0.0) == 0.0;
  const bool zero_im = data.phi_im.is_constant() && data.phi_im.eval({}, 0.0) == 0.0;
  if (!zero_re || !zero_im) {
    p.phi = [re = data.phi_re, im = data.phi_im](std::span<const double> x, double t) {
      return Complex(re.eval(x, t), im.eval(x, t));
    };
  }
  p.complex_phi = !zero_im;
  if (!(data.Phi.is_constant() && data.Phi.eval({}, 0.0) == 0.0))
    p.Phi = [e = data.Phi](std::span<const double> x) { return Complex(e.eval(x, 0.0), 0.0); };
  return p;
}

/// Time at which coefficients and φ are frozen for the step t_j → t_{j+1}.
inline double step_time(const Grid& g, int j, double theta) { return g.time(j) + (1.0 - theta) * g.dt; }

template <class S>
using SpMat = Eigen::SparseMatrix<S>;

template <class S>
S to_scalar(Complex z) {
  if constexpr (std::is_same_v<S, double>) return z.real();
  else return z;
}

/// A_h at time t: b_ii·d2 + 2 b_ij·cross (i<j) + f_i·d1 − λ, Dirichlet nodes eliminated.
template <class S>
SpMat<S> assemble_operator(const CoefficientSource& c, const Grid& g, double t) {
  using Trip = Eigen::Triplet<S>;
  std::vector<Trip> trips;
  const int n = g.n;
  trips.reserve(g.size() * static_cast<std::size_t>(1 + 2 * n + 2 * n * (n - 1)));
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::vector<double> x(static_cast<std::size_t>(n));
  for (std::size_t p = 0; p < g.size(); ++p) {
    g.index(p, idx);
    g.node(p, x);
    const auto cv = c.eval(x, t);
    const auto row = static_cast<int>(p);
    S diag = -to_scalar<S>(cv.lambda);
    auto add = [&](int da, int a, int db, int b, S w) {
      int q = row;
      const int ia = idx[static_cast<std::size_t>(a)] + da;
      if (ia < 0 || ia >= g.m[static_cast<std::size_t>(a)]) return;
      q += da * static_cast<int>(g.stride[static_cast<std::size_t>(a)]);
      if (db != 0) {
        const int ib = idx[static_cast<std::size_t>(b)] + db;
        if (ib < 0 || ib >= g.m[static_cast<std::size_t>(b)]) return;
        q += db * static_cast<int>(g.stride[static_cast<std::size_t>(b)]);
      }
      trips.emplace_back(row, q, w);
    };
    for (int i = 0; i < n; ++i) {
      const double hi = g.h[static_cast<std::size_t>(i)];
      const double bii = cv.b(i, i), fi = cv.f(i);
      diag -= S(2.0 * bii / (hi * hi));
      add(1, i, 0, i, S(bii / (hi * hi) + fi / (2.0 * hi)));
      add(-1, i, 0, i, S(bii / (hi * hi) - fi / (2.0 * hi)));
      for (int j = i + 1; j < n; ++j) {
        const double w = 2.0 * cv.b(i, j) / (4.0 * hi * g.h[static_cast<std::size_t>(j)]);
        if (w == 0.0) continue;
        add(1, i, 1, j, S(w));
        add(1, i, -1, j, S(-w));
        add(-1, i, 1, j, S(-w));
        add(-1, i, -1, j, S(w));
      }
    }
    trips.emplace_back(row, row, diag);
  }
  SpMat<S> a(static_cast<Eigen::Index>(g.size()), static_cast<Eigen::Index>(g.size()));
  a.setFromTriplets(trips.begin(), trips.end());
  return a;
}

/// B = I − θ·dt·A_h, C = I + (1−θ)·dt·A_h at the frozen time of step j.
template <class S>
struct StepSystem {
  SpMat<S> B, C;
  double time = 0.0;
};

template <class S>
StepSystem<S> assemble_step(const CoefficientSource& c, const Grid& g, int j, double theta) {
  if (!(theta >= 0.5 && theta <= 1.0)) throw std::invalid_argument("theta must lie in [0.5, 1]");
  StepSystem<S> s;
  s.time = step_time(g, j, theta);
  const SpMat<S> a = assemble_operator<S>(c, g, s.time);
  SpMat<S> id(a.rows(), a.cols());
  id.setIdentity();
  s.B = id - S(theta * g.dt) * a;
  s.C = id + S((1.0 - theta) * g.dt) * a;
  s.B.makeCompressed();
  s.C.makeCompressed();
  return s;
}

struct SolveStats {
  int steps = 0;
  int factorizations = 0;
  bool direct = true;
  int max_iterations = 0;
  double max_residual = 0.0;
};

struct DiscreteSolution {
  Grid grid;
  double theta = 1.0;
  bool complex_mode = false;
  std::vector<CVector> v;      // slices j = 0..nt
  std::vector<CVector> phibar; // source slices j = 0..nt−1 (at step_time)
  CVector Phi;
  SolveStats stats;
};

template <class S>
using SVec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <class S>
SVec<S> narrow(const CVector& v) {
  if constexpr (std::is_same_v<S, double>) return v.real();
  else return v;
}

/// Marches v_nt = Φ, B_j v_j = C_j v_{j+1} + dt·φ̄_j; the factorization is reused
/// while the coefficients do not depend on t.
template <class S>
std::vector<CVector> march_backward(const CoefficientSource& c, const Grid& g, double theta,
                                    const std::vector<CVector>& phibar, const CVector& PhiT, SolveStats& stats) {
  std::vector<CVector> v(static_cast<std::size_t>(g.nt + 1));
  v[static_cast<std::size_t>(g.nt)] = PhiT;
  StepSolver<S> solver;
  StepSystem<S> sys;
  bool have = false;
  for (int j = g.nt - 1; j >= 0; --j) {
    if (!have || c.time_dependent) {
      sys = assemble_step<S>(c, g, j, theta);
      solver.compute(sys.B);
      ++stats.factorizations;
      have = true;
    }
    SVec<S> rhs = sys.C * narrow<S>(v[static_cast<std::size_t>(j + 1)]);
    if (!phibar.empty()) rhs += S(g.dt) * narrow<S>(phibar[static_cast<std::size_t>(j)]);
    const SVec<S> x = solver.solve(rhs);
    v[static_cast<std::size_t>(j)] = x.template cast<Complex>();
    ++stats.steps;
    stats.direct = solver.direct();
    stats.max_iterations = std::max(stats.max_iterations, solver.last_iterations());
    stats.max_residual = std::max(stats.max_residual, solver.last_residual());
  }
  return v;
}

inline std::vector<CVector> sample_source(const Grid& g, const SourceFn& phi, double theta) {
  std::vector<CVector> out;
  if (!phi) return out;
  for (int j = 0; j < g.nt; ++j) {
    const double t = step_time(g, j, theta);
    out.push_back(sample(g, [&](std::span<const double> x) { return phi(x, t); }));
  }
  return out;
}

inline CVector sample_datum(const Grid& g, const DatumFn& Phi) {
  if (!Phi) return CVector::Zero(static_cast<Eigen::Index>(g.size()));
  return sample(g, [&](std::span<const double> x) { return Phi(x); });
}

/// Solves on already-sampled data; real arithmetic unless `complex_mode`.
inline DiscreteSolution solve_backward(const CoefficientSource& c, const Grid& g, double theta,
                                       std::vector<CVector> phibar, CVector PhiT, bool complex_mode) {
  DiscreteSolution s;
  s.grid = g;
  s.theta = theta;
  s.complex_mode = complex_mode;
  s.phibar = std::move(phibar);
  s.Phi = std::move(PhiT);
  if (complex_mode) s.v = march_backward<Complex>(c, g, theta, s.phibar, s.Phi, s.stats);
  else s.v = march_backward<double>(c, g, theta, s.phibar, s.Phi, s.stats);
  return s;
}

inline DiscreteSolution solve_backward(const BackwardProblem& p, const Grid& g, double theta = 1.0) {
  if (p.coeffs.n != g.n) throw std::invalid_argument("grid and problem dimensions differ");
  return solve_backward(p.coeffs, g, theta, sample_source(g, p.phi, theta), sample_datum(g, p.Phi), p.complex_mode());
}

struct AdjointSolution {
  Grid grid;
  std::vector<CVector> p; // densities j = 0..nt
  std::vector<CVector> q; // multipliers of dt·φ̄_j, j = 0..nt−1
  SolveStats stats;
};

/// p_0 = ρ, q_j = B_j^{−T} p_j, p_{j+1} = C_jᵀ q_j: the transpose of march_backward,
/// so that (v_0, ρ)_h = Σ_j dt (φ̄_j, q_j)_h + (Φ, p_nt)_h holds exactly.
template <class S>
AdjointSolution march_adjoint(const CoefficientSource& c, const Grid& g, double theta, const CVector& rho) {
  AdjointSolution a;
  a.grid = g;
  a.p.push_back(rho);
  StepSolver<S> solver;
  StepSystem<S> sys;
  bool have = false;
  for (int j = 0; j < g.nt; ++j) {
    if (!have || c.time_dependent) {
      sys = assemble_step<S>(c, g, j, theta);
      solver.compute(sys.B);
      ++a.stats.factorizations;
      have = true;
    }
    const SVec<S> q = solver.solve_transpose(narrow<S>(a.p.back()));
    a.q.push_back(q.template cast<Complex>());
    a.p.push_back((SVec<S>(sys.C.transpose() * q)).template cast<Complex>());
    ++a.stats.steps;
    a.stats.direct = solver.direct();
    a.stats.max_residual = std::max(a.stats.max_residual, solver.last_residual());
  }
  return a;
}

inline AdjointSolution solve_forward_adjoint(const CoefficientSource& c, const Grid& g, const CVector& rho,
                                             double theta = 1.0, bool complex_mode = false) {
  if (static_cast<std::size_t>(rho.size()) != g.size()) throw std::invalid_argument("density size mismatch");
  const bool cm = complex_mode || c.complex || rho.imag().cwiseAbs().maxCoeff() > 0.0;
  return cm ? march_adjoint<Complex>(c, g, theta, rho) : march_adjoint<double>(c, g, theta, rho);
}

/// Right-hand side of the discrete duality identity.
inline Complex duality_rhs(const Grid& g, const AdjointSolution& a, const std::vector<CVector>& phibar, const CVector& PhiT) {
  Complex s = pair(g, PhiT, a.p.back());
  for (std::size_t j = 0; j < phibar.size(); ++j) s += g.dt * pair(g, phibar[j], a.q[j]);
  return s;
}

inline double mass(const Grid& g, const CVector& p) { return g.cell_volume() * p.real().sum(); }

inline NormBundle solution_norms(const DiscreteSolution& s, const NormWeights& w, const std::vector<int>& N) {
  return discrete_norms(s.grid, s.v, w, N);
}

/// ‖v‖_{Ŷ²} / (‖φ‖_{X⁰} + ‖Φ‖_{H¹}); 0 when the data vanish.
inline double apriori_ratio(const DiscreteSolution& s, const NormWeights& w, const std::vector<int>& N) {
  const double yhat = solution_norms(s, w, N).Yhat2;
  const double data = x0_norm(s.grid, s.phibar) + std::sqrt(std::pow(l2(s.grid, s.Phi), 2) + std::pow(h1_seminorm(s.grid, s.Phi), 2));
  if (data == 0.0) return 0.0;
  return yhat / data;
}

} // namespace cordes
