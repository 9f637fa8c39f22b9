#pragma once

// Registry of built-in coefficient fields and their default PDE data.

#include "cordes/field.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace cordes {

using Params = std::map<std::string, double>;

/// Source, terminal datum and (optionally) the exact solution of a problem.
struct ProblemData {
  Expr phi_re = Expr::constant(0.0);
  Expr phi_im = Expr::constant(0.0);
  Expr Phi = Expr::constant(0.0);
  std::optional<Expr> exact;
};

namespace detail {

inline double param(const Params& p, const std::string& key) {
  auto it = p.find(key);
  if (it == p.end()) throw FieldError("missing parameter '" + key + "'");
  return it->second;
}

inline double param_or(const Params& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

inline int int_param(const Params& p, const std::string& key, std::optional<int> fallback = std::nullopt) {
  auto it = p.find(key);
  if (it == p.end()) {
    if (!fallback) throw FieldError("missing parameter '" + key + "'");
    return *fallback;
  }
  const double v = it->second;
  if (v != std::floor(v)) throw FieldError("parameter '" + key + "' must be an integer");
  return static_cast<int>(v);
}

inline std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::vector<std::optional<ScalarField>> diag_b(int n, const ScalarField& d) {
  std::vector<std::optional<ScalarField>> b(static_cast<std::size_t>(n * n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) b[static_cast<std::size_t>(i * n + j)] = i == j ? d : ScalarField::constant(0.0);
  return b;
}

inline std::vector<ScalarField> diag_beta(int n, const ScalarField& d) {
  std::vector<ScalarField> beta(static_cast<std::size_t>(n * n), ScalarField::constant(0.0));
  for (int i = 0; i < n; ++i) beta[static_cast<std::size_t>(i * n + i)] = d;
  return beta;
}

inline std::vector<ScalarField> zeros(int n) { return std::vector<ScalarField>(static_cast<std::size_t>(n)); }

inline Expr sine_bump(int n, const Box& box) {
  std::string s;
  for (int i = 0; i < n; ++i) {
    if (i) s += " * ";
    const double lo = box.lo[static_cast<std::size_t>(i)], hi = box.hi[static_cast<std::size_t>(i)];
    s += "sin(pi * (x" + std::to_string(i + 1) + " - " + num(lo) + ") / " + num(hi - lo) + ")";
  }
  return Expr::parse(s);
}

} // namespace detail

inline const std::vector<std::string>& builtin_names() {
  static const std::vector<std::string> names{"identity_heat", "paper_3x3", "checkerboard_2d", "manufactured_1d",
                                              "gaussian_free_space"};
  return names;
}

/// Builds a registered field. Parameters per name:
///   identity_heat        n=1, T=1, lo=0, hi=1
///   paper_3x3            alpha, beta (required), T=1, lo=0, hi=1, pattern=0
///                        (pattern=1 flips the sign of α(x), β(x) on a 4-cell
///                        checker in x2, keeping |α(x)| = alpha, |β(x)| = beta)
///   checkerboard_2d      low, high, cells (required), T=1
///   manufactured_1d      T=0.5
///   gaussian_free_space  n=1, T=0.5, L=10 (window (-L, L)^n)
inline CoefficientField builtin_problem(const std::string& name, const Params& p) {
  using detail::param_or;
  if (name == "identity_heat") {
    const int n = detail::int_param(p, "n", 1);
    const Box box = Box::cube(n, param_or(p, "lo", 0.0), param_or(p, "hi", 1.0));
    return CoefficientField(n, param_or(p, "T", 1.0), Domain{false, box}, detail::diag_b(n, ScalarField::constant(1.0)),
                            detail::zeros(n), {}, {}, detail::diag_beta(n, ScalarField::constant(std::sqrt(2.0))));
  }
  if (name == "paper_3x3") {
    const double a = detail::param(p, "alpha");
    const double c = detail::param(p, "beta");
    const int pattern = detail::int_param(p, "pattern", 0);
    const Box box = Box::cube(3, param_or(p, "lo", 0.0), param_or(p, "hi", 1.0));
    ScalarField fa = ScalarField::constant(a), fc = ScalarField::constant(c);
    if (pattern == 1) {
      const std::string s = "(2 * step(sin(" + detail::num(8.0 * 3.141592653589793 / (box.hi[1] - box.lo[1])) +
                            " * (x2 - " + detail::num(box.lo[1]) + "))) - 1)";
      fa = ScalarField::parse(detail::num(a) + " * " + s);
      fc = ScalarField::parse(detail::num(c) + " * " + s);
    } else if (pattern != 0) {
      throw FieldError("paper_3x3: pattern must be 0 or 1");
    }
    std::vector<std::optional<ScalarField>> b(9, ScalarField::constant(0.0));
    b[0] = b[4] = b[8] = ScalarField::constant(1.0);
    b[1] = b[3] = fa;
    b[2] = b[6] = fc;
    std::optional<std::vector<ScalarField>> beta;
    if (pattern == 0 && a * a + c * c <= 1.0) {
      Matrix m = Matrix::Identity(3, 3);
      m(0, 1) = m(1, 0) = a;
      m(0, 2) = m(2, 0) = c;
      const Matrix root = symmetric_sqrt(2.0 * m);
      beta.emplace();
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) beta->push_back(ScalarField::constant(root(i, j)));
    }
    return CoefficientField(3, param_or(p, "T", 1.0), Domain{false, box}, std::move(b), detail::zeros(3), {}, {},
                            std::move(beta));
  }
  if (name == "checkerboard_2d") {
    const double low = detail::param(p, "low");
    const double high = detail::param(p, "high");
    const int cells = detail::int_param(p, "cells");
    if (cells < 1) throw FieldError("checkerboard_2d: cells must be >= 1");
    if (!(low > 0.0) || !(high > 0.0)) throw FieldError("checkerboard_2d: low and high must be positive");
    const Box box = Box::cube(2, 0.0, 1.0);
    PiecewiseTable tb{box, {cells, cells}, {}}, tbeta{box, {cells, cells}, {}};
    for (int j = 0; j < cells; ++j)
      for (int i = 0; i < cells; ++i) {
        const double v = (i + j) % 2 == 0 ? low : high;
        tb.values.push_back(v);
        tbeta.values.push_back(std::sqrt(2.0 * v));
      }
    return CoefficientField(2, param_or(p, "T", 1.0), Domain{false, box}, detail::diag_b(2, ScalarField(tb)),
                            detail::zeros(2), {}, {}, detail::diag_beta(2, ScalarField(tbeta)));
  }
  if (name == "manufactured_1d") {
    const Box box = Box::cube(1, 0.0, 1.0);
    return CoefficientField(1, param_or(p, "T", 0.5), Domain{false, box}, detail::diag_b(1, ScalarField::constant(1.0)),
                            detail::zeros(1), {}, {}, detail::diag_beta(1, ScalarField::constant(std::sqrt(2.0))));
  }
  if (name == "gaussian_free_space") {
    const int n = detail::int_param(p, "n", 1);
    const double L = param_or(p, "L", 10.0);
    return CoefficientField(n, param_or(p, "T", 0.5), Domain{true, Box::cube(n, -L, L)},
                            detail::diag_b(n, ScalarField::constant(1.0)), detail::zeros(n), {}, {},
                            detail::diag_beta(n, ScalarField::constant(std::sqrt(2.0))));
  }
  throw FieldError("unknown builtin problem '" + name + "'");
}

/// Default φ, Φ (and exact solution where known) for a builtin.
inline ProblemData builtin_data(const std::string& name, const Params& p) {
  ProblemData d;
  const auto field = builtin_problem(name, p);
  if (name == "manufactured_1d") {
    const double T = field.horizon();
    d.phi_re = Expr::parse("(1 + pi^2) * exp(-t) * sin(pi * x1)");
    d.Phi = Expr::parse(detail::num(std::exp(-T)) + " * sin(pi * x1)");
    d.exact = Expr::parse("exp(-t) * sin(pi * x1)");
  } else if (name == "gaussian_free_space") {
    d.Phi = Expr::parse("x1^2");
  } else {
    d.Phi = detail::sine_bump(field.dim(), field.domain().box);
  }
  return d;
}

} // namespace cordes
