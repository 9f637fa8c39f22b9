#pragma once

#include "cordes/field.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cordes {

enum class SplitKind { Identity, Constant, Explicit };

inline std::string to_string(SplitKind k) {
  switch (k) {
  case SplitKind::Identity: return "identity";
  case SplitKind::Constant: return "constant";
  case SplitKind::Explicit: return "explicit";
  }
  return "?";
}

/// How to choose the continuous reference part b̄.
struct SplitSpec {
  SplitKind kind = SplitKind::Identity;
  std::vector<std::optional<ScalarField>> bbar;   // Explicit: n*n row-major, upper triangle used
  std::optional<std::vector<int>> N;              // zero-based override of the index set
  std::optional<std::vector<double>> gamma;       // override of γ_k, one per N entry
};

class CoverError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Boolean n×n support of b̂ over the sampling set.
struct SparsityPattern {
  int n = 0;
  std::vector<char> nonzero; // row-major

  bool at(int i, int j) const { return nonzero[static_cast<std::size_t>(i * n + j)] != 0; }
};

inline constexpr double kZeroTol = 1e-12;

inline SparsityPattern support(const std::vector<Matrix>& bhat, int n, double tol = kZeroTol) {
  SparsityPattern p{n, std::vector<char>(static_cast<std::size_t>(n * n), 0)};
  for (const auto& m : bhat)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (std::abs(m(i, j)) > tol) p.nonzero[static_cast<std::size_t>(i * n + j)] = 1;
  return p;
}

/// 𝒩 covers b̂ when b̂_ij ≡ 0 for every pair with i ∉ 𝒩 and j ∉ 𝒩 (i = j included).
inline bool covers(const SparsityPattern& p, const std::vector<int>& N) {
  std::vector<char> in(static_cast<std::size_t>(p.n), 0);
  for (int k : N) in[static_cast<std::size_t>(k)] = 1;
  for (int i = 0; i < p.n; ++i)
    for (int j = 0; j < p.n; ++j)
      if (p.at(i, j) && !in[static_cast<std::size_t>(i)] && !in[static_cast<std::size_t>(j)]) return false;
  return true;
}

inline std::vector<int> subset_from_mask(std::uint32_t mask, int n) {
  std::vector<int> s;
  for (int i = 0; i < n; ++i)
    if (mask & (1u << i)) s.push_back(i);
  return s;
}

/// Every cover of the pattern in lexicographic order of the sorted index lists.
inline std::vector<std::vector<int>> all_covers(const SparsityPattern& p) {
  if (p.n > 16) throw CoverError("exhaustive cover enumeration needs n <= 16");
  std::vector<std::vector<int>> out;
  for (std::uint32_t mask = 0; mask < (1u << p.n); ++mask) {
    auto s = subset_from_mask(mask, p.n);
    if (covers(p, s)) out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Greedy cover: forced diagonal indices first, then repeatedly the vertex
/// touching most uncovered edges (smallest index on ties).
inline std::vector<int> greedy_cover(const SparsityPattern& p) {
  std::vector<char> in(static_cast<std::size_t>(p.n), 0);
  for (int k = 0; k < p.n; ++k)
    if (p.at(k, k)) in[static_cast<std::size_t>(k)] = 1;
  for (;;) {
    int best = -1, best_deg = 0;
    for (int v = 0; v < p.n; ++v) {
      if (in[static_cast<std::size_t>(v)]) continue;
      int deg = 0;
      for (int u = 0; u < p.n; ++u)
        if (u != v && !in[static_cast<std::size_t>(u)] && (p.at(u, v) || p.at(v, u))) ++deg;
      if (deg > best_deg) best = v, best_deg = deg;
    }
    if (best < 0) break;
    in[static_cast<std::size_t>(best)] = 1;
  }
  std::vector<int> s;
  for (int k = 0; k < p.n; ++k)
    if (in[static_cast<std::size_t>(k)]) s.push_back(k);
  return s;
}

/// Smallest-cardinality cover, lexicographically first among equals.
inline std::vector<int> minimal_cover(const SparsityPattern& p) {
  if (p.n > 16) return greedy_cover(p);
  auto covers_list = all_covers(p);
  std::stable_sort(covers_list.begin(), covers_list.end(),
                   [](const auto& a, const auto& b) { return a.size() < b.size(); });
  return covers_list.front();
}

/// b = b̄ + b̂ together with the index set 𝒩 and weights γ; b̄ and b̂ are also
/// kept at every point of the sampling set used to build the split.
struct Decomposition {
  int n = 0;
  SplitKind kind = SplitKind::Identity;
  Matrix bbar_const;                     // Identity / Constant
  std::vector<ScalarField> bbar_fields;  // Explicit, n*n full
  std::vector<int> N;                    // zero-based ascending
  std::vector<double> gamma;             // per N entry; empty until chosen
  bool N_user = false;

  std::vector<Matrix> bbar_samples;
  std::vector<Matrix> bhat_samples;
  std::vector<Matrix> b_samples;

  Matrix bbar_at(std::span<const double> x, double t) const {
    if (kind != SplitKind::Explicit) return bbar_const;
    Matrix m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) m(i, j) = m(j, i) = bbar_fields[static_cast<std::size_t>(i * n + j)].eval(x, t);
    return m;
  }

  bool bbar_is_identity() const {
    if (kind == SplitKind::Identity) return true;
    for (const auto& m : bbar_samples)
      if ((m - Matrix::Identity(n, n)).cwiseAbs().maxCoeff() > kZeroTol) return false;
    return true;
  }

  bool bbar_time_dependent() const {
    for (const auto& f : bbar_fields)
      if (f.depends_on_time()) return true;
    return false;
  }
};

inline Decomposition decompose(const CoefficientField& field, const SplitSpec& spec, const SamplingSet& samples) {
  const int n = field.dim();
  Decomposition d;
  d.n = n;
  d.kind = spec.kind;

  if (spec.kind == SplitKind::Explicit) {
    if (spec.bbar.size() != static_cast<std::size_t>(n * n)) throw FieldError("explicit split needs n*n b-bar entries");
    d.bbar_fields.resize(static_cast<std::size_t>(n * n));
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        const auto& up = spec.bbar[static_cast<std::size_t>(i * n + j)];
        const auto& lo = spec.bbar[static_cast<std::size_t>(j * n + i)];
        ScalarField s = up ? *up : (lo ? *lo : ScalarField::constant(0.0));
        if (s.max_var_index() >= n) throw FieldError("b-bar references a coordinate beyond dimension n");
        d.bbar_fields[static_cast<std::size_t>(i * n + j)] = s;
        d.bbar_fields[static_cast<std::size_t>(j * n + i)] = s;
      }
  }

  const bool dep = field.time_dependent() || d.bbar_time_dependent();
  samples.for_each(dep, [&](std::span<const double> x, double t) { d.b_samples.push_back(field.eval(x, t).b); });

  if (spec.kind == SplitKind::Identity) {
    d.bbar_const = Matrix::Identity(n, n);
  } else if (spec.kind == SplitKind::Constant) {
    Matrix mean = Matrix::Zero(n, n);
    for (const auto& m : d.b_samples) mean += m;
    d.bbar_const = mean / static_cast<double>(d.b_samples.size());
  }

  std::size_t s = 0;
  samples.for_each(dep, [&](std::span<const double> x, double t) {
    Matrix bb = d.bbar_at(x, t);
    d.bhat_samples.push_back(d.b_samples[s++] - bb);
    d.bbar_samples.push_back(std::move(bb));
  });

  const auto pattern = support(d.bhat_samples, n);
  if (spec.N) {
    auto N = *spec.N;
    std::sort(N.begin(), N.end());
    N.erase(std::unique(N.begin(), N.end()), N.end());
    for (int k : N)
      if (k < 0 || k >= n) throw CoverError("index set entry out of range");
    if (!covers(pattern, N)) throw CoverError("index set does not cover the support of b-hat");
    d.N = std::move(N);
    d.N_user = true;
  } else {
    d.N = minimal_cover(pattern);
  }
  if (spec.gamma) {
    if (spec.gamma->size() != d.N.size()) throw CoverError("gamma must have one entry per index in N");
    for (double g : *spec.gamma)
      if (!(g > 0.0 && g < 2.0)) throw CoverError("gamma entries must lie in (0, 2)");
    d.gamma = *spec.gamma;
  }
  return d;
}

} // namespace cordes
