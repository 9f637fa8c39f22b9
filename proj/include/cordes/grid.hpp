#pragma once

// Node-centered uniform grids on a box with eliminated Dirichlet nodes,
// central-difference stencils and discrete Sobolev-type norms.

#include "cordes/field.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace cordes {

using CVector = Eigen::VectorXcd;

class GridError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

struct Grid {
  int n = 0;
  Box box;
  std::vector<int> m;      // interior nodes per axis
  std::vector<double> h;   // spacing per axis
  std::vector<std::size_t> stride;
  int nt = 1;
  double T = 1.0;
  double dt = 1.0;

  std::size_t size() const {
    std::size_t s = 1;
    for (int v : m) s *= static_cast<std::size_t>(v);
    return s;
  }
  double cell_volume() const {
    double v = 1.0;
    for (double x : h) v *= x;
    return v;
  }
  double coord(int axis, int i) const {
    return box.lo[static_cast<std::size_t>(axis)] + (i + 1) * h[static_cast<std::size_t>(axis)];
  }
  double time(int j) const { return j * dt; }

  void index(std::size_t p, std::span<int> out) const {
    for (int a = 0; a < n; ++a) {
      out[static_cast<std::size_t>(a)] = static_cast<int>(p % static_cast<std::size_t>(m[static_cast<std::size_t>(a)]));
      p /= static_cast<std::size_t>(m[static_cast<std::size_t>(a)]);
    }
  }
  void node(std::size_t p, std::span<double> x) const {
    for (int a = 0; a < n; ++a) {
      const auto ma = static_cast<std::size_t>(m[static_cast<std::size_t>(a)]);
      x[static_cast<std::size_t>(a)] = coord(a, static_cast<int>(p % ma));
      p /= ma;
    }
  }
  std::vector<double> node(std::size_t p) const {
    std::vector<double> x(static_cast<std::size_t>(n));
    node(p, x);
    return x;
  }

  bool same_space(const Grid& o) const { return n == o.n && m == o.m && box.lo == o.box.lo && box.hi == o.box.hi; }
};

inline Grid build_grid(const Box& box, std::vector<int> m, int nt, double T) {
  const int n = box.dim();
  if (m.size() == 1 && n > 1) m.assign(static_cast<std::size_t>(n), m.front());
  if (static_cast<int>(m.size()) != n) throw GridError("need one node count per axis");
  if (nt < 1) throw GridError("nt must be >= 1");
  if (!(T > 0.0)) throw GridError("T must be positive");
  Grid g;
  g.n = n;
  g.box = box;
  g.m = std::move(m);
  g.nt = nt;
  g.T = T;
  g.dt = T / nt;
  std::size_t s = 1;
  for (int a = 0; a < n; ++a) {
    const auto ua = static_cast<std::size_t>(a);
    if (g.m[ua] < 3) throw GridError("at least 3 interior nodes per axis are required");
    if (!(box.hi[ua] > box.lo[ua])) throw GridError("degenerate box");
    g.h.push_back((box.hi[ua] - box.lo[ua]) / (g.m[ua] + 1));
    g.stride.push_back(s);
    s *= static_cast<std::size_t>(g.m[ua]);
  }
  return g;
}

inline Grid build_grid(const Box& box, int m, int nt, double T) { return build_grid(box, std::vector<int>{m}, nt, T); }

/// Samples a function at the interior nodes.
inline CVector sample(const Grid& g, const std::function<Complex(std::span<const double>)>& fn) {
  CVector v(static_cast<Eigen::Index>(g.size()));
  std::vector<double> x(static_cast<std::size_t>(g.n));
  for (std::size_t p = 0; p < g.size(); ++p) {
    g.node(p, x);
    v(static_cast<Eigen::Index>(p)) = fn(x);
  }
  return v;
}

enum class StencilKind { D1, D2, Cross };

struct Stencil {
  StencilKind kind = StencilKind::D2;
  int i = 0, j = 0; // zero-based axes; j used only by Cross
};

/// Central differences with zero ghost values outside D.
template <class Vec>
Vec apply_stencil(const Grid& g, const Vec& u, Stencil s) {
  if (static_cast<std::size_t>(u.size()) != g.size()) throw GridError("grid function size mismatch");
  if (s.i < 0 || s.i >= g.n || (s.kind == StencilKind::Cross && (s.j < 0 || s.j >= g.n)))
    throw GridError("stencil axis out of range");
  if (s.kind == StencilKind::Cross && s.i == s.j) s.kind = StencilKind::D2;
  using S = typename Vec::Scalar;
  Vec out(u.size());
  std::vector<int> idx(static_cast<std::size_t>(g.n));
  const auto ui = static_cast<std::size_t>(s.i), uj = static_cast<std::size_t>(s.j);
  const auto si = static_cast<Eigen::Index>(g.stride[ui]);
  const double hi = g.h[ui];
  for (std::size_t p = 0; p < g.size(); ++p) {
    g.index(p, idx);
    const auto P = static_cast<Eigen::Index>(p);
    auto at = [&](int di, int dj) -> S {
      const int a = idx[ui] + di;
      if (a < 0 || a >= g.m[ui]) return S(0);
      Eigen::Index q = P + di * si;
      if (dj != 0) {
        const int b = idx[uj] + dj;
        if (b < 0 || b >= g.m[uj]) return S(0);
        q += dj * static_cast<Eigen::Index>(g.stride[uj]);
      }
      return u(q);
    };
    switch (s.kind) {
    case StencilKind::D1: out(P) = (at(1, 0) - at(-1, 0)) / (2.0 * hi); break;
    case StencilKind::D2: out(P) = (at(1, 0) - 2.0 * u(P) + at(-1, 0)) / (hi * hi); break;
    case StencilKind::Cross:
      out(P) = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * hi * g.h[uj]);
      break;
    }
  }
  return out;
}

/// h^n Σ u ρ (bilinear, no conjugation); nodal trapezoidal rule with zero boundary values.
template <class VecA, class VecB>
auto pair(const Grid& g, const VecA& u, const VecB& rho) {
  if (u.size() != rho.size() || static_cast<std::size_t>(u.size()) != g.size()) throw GridError("grid mismatch in pair");
  return g.cell_volume() * (u.array() * rho.array()).sum();
}

template <class Vec>
double l2(const Grid& g, const Vec& u) {
  return std::sqrt(g.cell_volume() * u.squaredNorm());
}

/// Forward-difference H¹ seminorm over all m+1 cells per axis (boundary zeros included).
template <class Vec>
double h1_seminorm(const Grid& g, const Vec& u) {
  double acc = 0.0;
  std::vector<int> idx(static_cast<std::size_t>(g.n));
  for (int a = 0; a < g.n; ++a) {
    const auto ua = static_cast<std::size_t>(a);
    const auto sa = static_cast<Eigen::Index>(g.stride[ua]);
    const double inv = 1.0 / (g.h[ua] * g.h[ua]);
    for (std::size_t p = 0; p < g.size(); ++p) {
      g.index(p, idx);
      const auto P = static_cast<Eigen::Index>(p);
      if (idx[ua] == 0) acc += std::norm(u(P)) * inv;
      const auto next = idx[ua] + 1 < g.m[ua] ? u(P + sa) : typename Vec::Scalar(0);
      acc += std::norm(next - u(P)) * inv;
    }
  }
  return std::sqrt(g.cell_volume() * acc);
}

struct NormWeights {
  std::vector<double> gamma; // aligned with N
  double alpha1 = 0.1;
  double alpha2 = 1.0;
};

struct SliceNorms {
  double H0 = 0.0, H1 = 0.0, H1semi = 0.0, W22 = 0.0, Hhat2 = 0.0;
};

struct NormBundle {
  std::vector<SliceNorms> slices; // j = 0..nt
  double X0 = 0.0, X2 = 0.0, Xhat2 = 0.0, C0 = 0.0, C1 = 0.0, Y2 = 0.0, Yhat2 = 0.0;
};

inline void check_weights(const NormWeights& w, const std::vector<int>& N) {
  if (!(w.alpha1 >= 0.0) || !(w.alpha2 >= 0.0)) throw GridError("alpha1 and alpha2 must be non-negative");
  if (w.gamma.size() != N.size()) throw GridError("one gamma per index in N is required");
  for (double g : w.gamma)
    if (!(g > 0.0 && g < 2.0)) throw GridError("gamma entries must lie in (0, 2)");
}

/// H⁰, H¹, W₂² and Ĥ² of a single slice. N holds zero-based axes.
template <class Vec>
SliceNorms slice_norms(const Grid& g, const Vec& u, const NormWeights& w, const std::vector<int>& N) {
  check_weights(w, N);
  SliceNorms s;
  s.H0 = l2(g, u);
  s.H1semi = h1_seminorm(g, u);
  s.H1 = std::sqrt(s.H0 * s.H0 + s.H1semi * s.H1semi);
  std::vector<double> d2(static_cast<std::size_t>(g.n * g.n));
  for (int i = 0; i < g.n; ++i)
    for (int j = i; j < g.n; ++j) {
      const Stencil st{i == j ? StencilKind::D2 : StencilKind::Cross, i, j};
      const double v = l2(g, apply_stencil(g, u, st));
      d2[static_cast<std::size_t>(i * g.n + j)] = d2[static_cast<std::size_t>(j * g.n + i)] = v * v;
    }
  double second = 0.0;
  for (double v : d2) second += v;
  s.W22 = std::sqrt(s.H0 * s.H0 + s.H1semi * s.H1semi + second);
  double bracket = 0.0;
  for (std::size_t q = 0; q < N.size(); ++q) {
    const int k = N[q];
    double row = 0.0;
    for (int i = 0; i < g.n; ++i) row += d2[static_cast<std::size_t>(k * g.n + i)];
    bracket += row - 0.5 * w.gamma[q] * d2[static_cast<std::size_t>(k * g.n + k)];
  }
  s.Hhat2 = std::sqrt(std::max(0.0, bracket)) + w.alpha1 * s.W22;
  return s;
}

/// Space-time norms: rectangle rule over slices 0..nt−1, slice maxima over 0..nt.
template <class Vec>
NormBundle discrete_norms(const Grid& g, const std::vector<Vec>& slices, const NormWeights& w, const std::vector<int>& N) {
  NormBundle b;
  double x0 = 0.0, x2 = 0.0, xh = 0.0;
  for (std::size_t j = 0; j < slices.size(); ++j) {
    const auto s = slice_norms(g, slices[j], w, N);
    b.slices.push_back(s);
    if (j + 1 < slices.size() || slices.size() == 1) {
      x0 += g.dt * s.H0 * s.H0;
      x2 += g.dt * s.W22 * s.W22;
      xh += g.dt * s.Hhat2 * s.Hhat2;
    }
    b.C0 = std::max(b.C0, s.H0);
    b.C1 = std::max(b.C1, s.H1);
  }
  b.X0 = std::sqrt(x0);
  b.X2 = std::sqrt(x2);
  b.Xhat2 = std::sqrt(xh);
  b.Y2 = b.X2 + b.C1;
  b.Yhat2 = b.Xhat2 + w.alpha2 * b.C1;
  return b;
}

/// ‖φ‖ in X⁰ for slices sampled on the same rectangle-rule levels.
template <class Vec>
double x0_norm(const Grid& g, const std::vector<Vec>& slices) {
  double acc = 0.0;
  for (const auto& s : slices) acc += g.dt * g.cell_volume() * s.squaredNorm();
  return std::sqrt(acc);
}

} // namespace cordes
