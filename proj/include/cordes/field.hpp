#pragma once

#include "cordes/expr.hpp"
#include "cordes/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace cordes {

using Complex = std::complex<double>;

class FieldError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct Box {
  std::vector<double> lo, hi;

  int dim() const noexcept { return static_cast<int>(lo.size()); }

  /// Closed box membership.
  bool contains(std::span<const double> x) const {
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (x[i] < lo[i] || x[i] > hi[i]) return false;
    return true;
  }

  /// Open box membership (the domain D itself).
  bool interior(std::span<const double> x) const {
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (!(x[i] > lo[i] && x[i] < hi[i])) return false;
    return true;
  }

  double volume() const {
    double v = 1.0;
    for (std::size_t i = 0; i < lo.size(); ++i) v *= hi[i] - lo[i];
    return v;
  }

  static Box cube(int n, double a, double b) {
    return Box{std::vector<double>(static_cast<std::size_t>(n), a), std::vector<double>(static_cast<std::size_t>(n), b)};
  }
};

/// Either a bounded box with a Dirichlet boundary, or all of R^n. For R^n the
/// box is the computational window used by grid-based solvers.
struct Domain {
  bool all_space = false;
  Box box;

  bool inside(std::span<const double> x) const { return all_space || box.interior(x); }
};

/// Piecewise-constant scalar over a uniform partition of a box into cells.
struct PiecewiseTable {
  Box box;
  std::vector<int> cells;      // per axis
  std::vector<double> values;  // axis 0 fastest

  std::size_t cell_of(std::span<const double> x) const {
    std::size_t idx = 0, stride = 1;
    for (std::size_t a = 0; a < cells.size(); ++a) {
      const double u = (x[a] - box.lo[a]) / (box.hi[a] - box.lo[a]);
      int c = static_cast<int>(std::floor(u * cells[a]));
      c = std::clamp(c, 0, cells[a] - 1);
      idx += static_cast<std::size_t>(c) * stride;
      stride *= static_cast<std::size_t>(cells[a]);
    }
    return idx;
  }

  double eval(std::span<const double> x) const { return values[cell_of(x)]; }
};

class ScalarField {
public:
  ScalarField() : repr_(Expr::constant(0.0)) {}
  ScalarField(Expr e) : repr_(std::move(e)) {}             // NOLINT(google-explicit-constructor)
  ScalarField(PiecewiseTable t) : repr_(std::move(t)) {}   // NOLINT(google-explicit-constructor)

  static ScalarField constant(double v) { return ScalarField(Expr::constant(v)); }
  static ScalarField parse(std::string_view text) { return ScalarField(Expr::parse(text)); }

  double eval(std::span<const double> x, double t) const {
    if (const auto* e = std::get_if<Expr>(&repr_)) return e->eval(x, t);
    return std::get<PiecewiseTable>(repr_).eval(x);
  }

  bool is_table() const noexcept { return std::holds_alternative<PiecewiseTable>(repr_); }
  bool is_constant() const noexcept {
    const auto* e = std::get_if<Expr>(&repr_);
    return e && e->is_constant();
  }
  bool is_zero() const {
    return is_constant() && std::get<Expr>(repr_).eval({}, 0.0) == 0.0;
  }
  bool depends_on_time() const noexcept {
    const auto* e = std::get_if<Expr>(&repr_);
    return e && e->depends_on_time();
  }
  int max_var_index() const noexcept {
    if (const auto* e = std::get_if<Expr>(&repr_)) return e->max_var_index();
    return static_cast<int>(std::get<PiecewiseTable>(repr_).cells.size()) - 1;
  }
  std::string describe() const {
    if (const auto* e = std::get_if<Expr>(&repr_)) return e->to_string();
    return "<piecewise table>";
  }

private:
  std::variant<Expr, PiecewiseTable> repr_;
};

/// Declared sampling set realising "ess sup": per axis the grid nodes of a
/// uniform partition of the closed box plus all cell midpoints; same in time.
struct SamplingSet {
  Box box;
  double T = 1.0;
  int space_nodes = 17; // nodes per axis, midpoints are added
  int time_nodes = 5;

  static int default_space_nodes(int n) {
    if (n <= 3) return n == 1 ? 129 : n == 2 ? 33 : 17;
    // keep (2k − 1)^n at or below 1e5 points
    const int per_axis = static_cast<int>(std::floor(std::pow(1e5, 1.0 / n)));
    return std::max(2, (per_axis + 1) / 2);
  }

  std::vector<double> axis_points(int a) const {
    const int k = 2 * (space_nodes - 1);
    std::vector<double> p(static_cast<std::size_t>(k + 1));
    for (int i = 0; i <= k; ++i)
      p[static_cast<std::size_t>(i)] = box.lo[static_cast<std::size_t>(a)] +
                                       (box.hi[static_cast<std::size_t>(a)] - box.lo[static_cast<std::size_t>(a)]) * i / k;
    return p;
  }

  std::vector<double> time_points(bool time_dependent) const {
    if (!time_dependent || time_nodes < 2) return {0.0};
    const int k = 2 * (time_nodes - 1);
    std::vector<double> p(static_cast<std::size_t>(k + 1));
    for (int i = 0; i <= k; ++i) p[static_cast<std::size_t>(i)] = T * i / k;
    return p;
  }

  std::size_t space_count() const {
    std::size_t c = 1;
    for (int a = 0; a < box.dim(); ++a) c *= static_cast<std::size_t>(2 * (space_nodes - 1) + 1);
    return c;
  }

  /// Visits every (x, t) in deterministic order, axis 0 fastest, time outermost.
  template <class F>
  void for_each(bool time_dependent, F&& f) const {
    const int n = box.dim();
    std::vector<std::vector<double>> axes;
    for (int a = 0; a < n; ++a) axes.push_back(axis_points(a));
    std::vector<double> x(static_cast<std::size_t>(n));
    std::vector<std::size_t> idx(static_cast<std::size_t>(n), 0);
    const std::size_t total = space_count();
    for (double t : time_points(time_dependent)) {
      std::fill(idx.begin(), idx.end(), 0);
      for (std::size_t s = 0; s < total; ++s) {
        for (int a = 0; a < n; ++a) x[static_cast<std::size_t>(a)] = axes[static_cast<std::size_t>(a)][idx[static_cast<std::size_t>(a)]];
        f(std::span<const double>(x), t);
        for (int a = 0; a < n; ++a) {
          if (++idx[static_cast<std::size_t>(a)] < axes[static_cast<std::size_t>(a)].size()) break;
          idx[static_cast<std::size_t>(a)] = 0;
        }
      }
    }
  }
};

/// Values of (b, f, λ) at one point.
struct CoefficientValues {
  Matrix b;
  Vector f;
  Complex lambda{0.0, 0.0};
};

/// The coefficient data of A v = Σ b_ij ∂²v/∂x_i∂x_j + Σ f_i ∂v/∂x_i − λ v,
/// vanishing outside D × [0, T]. Immutable after construction.
class CoefficientField {
public:
  CoefficientField() = default;

  /// `b` is row-major n×n; entries below the diagonal may be left empty
  /// (mirrored) or given explicitly (checked for symmetry by validate()).
  CoefficientField(int n, double T, Domain domain, std::vector<std::optional<ScalarField>> b,
                   std::vector<ScalarField> f, ScalarField lambda_re, ScalarField lambda_im,
                   std::optional<std::vector<ScalarField>> beta = std::nullopt)
      : n_(n), T_(T), domain_(std::move(domain)), f_(std::move(f)), lambda_re_(std::move(lambda_re)),
        lambda_im_(std::move(lambda_im)), beta_(std::move(beta)) {
    if (n < 1) throw FieldError("dimension must be >= 1");
    if (!(T > 0.0)) throw FieldError("horizon T must be positive");
    if (domain_.box.dim() != n) throw FieldError("domain dimension mismatch");
    for (int a = 0; a < n; ++a)
      if (!(domain_.box.hi[static_cast<std::size_t>(a)] > domain_.box.lo[static_cast<std::size_t>(a)]))
        throw FieldError("degenerate domain box");
    const auto nn = static_cast<std::size_t>(n) * static_cast<std::size_t>(n);
    if (b.size() != nn) throw FieldError("b must have n*n entries");
    if (f_.size() != static_cast<std::size_t>(n)) throw FieldError("f must have n entries");
    if (beta_ && beta_->size() != nn) throw FieldError("beta must have n*n entries");
    b_.resize(nn);
    lower_.resize(nn);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const auto k = idx(i, j);
        if (j >= i) {
          b_[k] = b[k] ? *b[k] : (b[idx(j, i)] ? *b[idx(j, i)] : ScalarField::constant(0.0));
        } else if (b[k]) {
          lower_[k] = *b[k];
        }
      }
    }
    check_dims();
  }

  int dim() const noexcept { return n_; }
  double horizon() const noexcept { return T_; }
  const Domain& domain() const noexcept { return domain_; }
  bool has_beta() const noexcept { return beta_.has_value(); }

  bool inside(std::span<const double> x, double t) const {
    return t >= 0.0 && t <= T_ && (domain_.all_space || domain_.box.contains(x));
  }

  bool time_dependent() const {
    bool dep = lambda_re_.depends_on_time() || lambda_im_.depends_on_time();
    for (const auto& s : b_) dep = dep || s.depends_on_time();
    for (const auto& s : f_) dep = dep || s.depends_on_time();
    return dep;
  }
  bool complex_lambda() const { return !lambda_im_.is_zero(); }

  const ScalarField& b_entry(int i, int j) const { return j >= i ? b_[idx(i, j)] : b_[idx(j, i)]; }
  const ScalarField& f_entry(int i) const { return f_[static_cast<std::size_t>(i)]; }
  const ScalarField& lambda_re() const { return lambda_re_; }
  const ScalarField& lambda_im() const { return lambda_im_; }

  /// Evaluation without the vanishing-outside-Q mask.
  CoefficientValues eval_raw(std::span<const double> x, double t) const {
    CoefficientValues v;
    v.b.resize(n_, n_);
    v.f.resize(n_);
    for (int i = 0; i < n_; ++i)
      for (int j = i; j < n_; ++j) {
        const double bij = b_[idx(i, j)].eval(x, t);
        v.b(i, j) = bij;
        v.b(j, i) = bij;
      }
    for (int i = 0; i < n_; ++i) v.f(i) = f_[static_cast<std::size_t>(i)].eval(x, t);
    v.lambda = {lambda_re_.eval(x, t), lambda_im_.eval(x, t)};
    return v;
  }

  CoefficientValues eval(std::span<const double> x, double t) const {
    if (!inside(x, t)) {
      CoefficientValues v;
      v.b = Matrix::Zero(n_, n_);
      v.f = Vector::Zero(n_);
      return v;
    }
    return eval_raw(x, t);
  }

  Matrix b_at(std::span<const double> x, double t) const { return eval(x, t).b; }

  /// β(x, t) if provided; otherwise the symmetric root of 2 b(x, t).
  Matrix beta_at(std::span<const double> x, double t) const {
    if (!inside(x, t)) return Matrix::Zero(n_, n_);
    if (beta_) {
      Matrix m(n_, n_);
      for (int i = 0; i < n_; ++i)
        for (int j = 0; j < n_; ++j) m(i, j) = (*beta_)[idx(i, j)].eval(x, t);
      return m;
    }
    return symmetric_sqrt(2.0 * eval_raw(x, t).b);
  }

  /// True when b, f, λ (and β) are constant expressions.
  bool constant_coefficients() const {
    bool c = lambda_re_.is_constant() && lambda_im_.is_constant();
    for (const auto& s : b_) c = c && s.is_constant();
    for (const auto& s : f_) c = c && s.is_constant();
    if (beta_)
      for (const auto& s : *beta_) c = c && s.is_constant();
    return c;
  }

  /// Checks symmetry of explicitly given lower entries (1e-12), finiteness,
  /// and ½ββᵀ = b (1e-12) on the sampling set.
  void validate(const SamplingSet& samples) const {
    const bool dep = time_dependent() || beta_time_dependent();
    samples.for_each(dep, [&](std::span<const double> x, double t) {
      const auto v = eval_raw(x, t);
      if (!v.b.allFinite() || !v.f.allFinite() || !std::isfinite(v.lambda.real()) || !std::isfinite(v.lambda.imag()))
        throw FieldError("coefficient is not finite at a sample point");
      for (int i = 0; i < n_; ++i)
        for (int j = 0; j < i; ++j) {
          const auto& lo = lower_[idx(i, j)];
          if (lo && std::abs(lo->eval(x, t) - v.b(i, j)) > 1e-12) throw FieldError("b is not symmetric at a sample point");
        }
      if (beta_) {
        Matrix m(n_, n_);
        for (int i = 0; i < n_; ++i)
          for (int j = 0; j < n_; ++j) m(i, j) = (*beta_)[idx(i, j)].eval(x, t);
        if ((0.5 * m * m.transpose() - v.b).cwiseAbs().maxCoeff() > 1e-12)
          throw FieldError("b differs from beta*beta^T/2 at a sample point");
      }
    });
  }

  /// max over samples of (|b|_F, |f|, |λ|).
  struct Bounds {
    double b = 0.0, f = 0.0, lambda = 0.0;
  };
  Bounds bounds(const SamplingSet& samples) const {
    Bounds out;
    samples.for_each(time_dependent(), [&](std::span<const double> x, double t) {
      const auto v = eval(x, t);
      out.b = std::max(out.b, v.b.norm());
      out.f = std::max(out.f, v.f.norm());
      out.lambda = std::max(out.lambda, std::abs(v.lambda));
    });
    return out;
  }

private:
  int n_ = 0;
  double T_ = 1.0;
  Domain domain_;
  std::vector<ScalarField> b_;                  // upper triangle used
  std::vector<std::optional<ScalarField>> lower_; // explicit lower entries
  std::vector<ScalarField> f_;
  ScalarField lambda_re_, lambda_im_;
  std::optional<std::vector<ScalarField>> beta_;

  std::size_t idx(int i, int j) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j);
  }

  bool beta_time_dependent() const {
    if (!beta_) return false;
    for (const auto& s : *beta_)
      if (s.depends_on_time()) return true;
    return false;
  }

  void check_dims() const {
    auto check = [&](const ScalarField& s, const char* what) {
      if (s.max_var_index() >= n_) throw FieldError(std::string(what) + " references a coordinate beyond dimension n");
    };
    for (const auto& s : b_) check(s, "b");
    for (const auto& s : lower_)
      if (s) check(*s, "b");
    for (const auto& s : f_) check(s, "f");
    check(lambda_re_, "lambda");
    check(lambda_im_, "lambda");
    if (beta_)
      for (const auto& s : *beta_) check(s, "beta");
  }
};

inline SamplingSet default_sampling(const CoefficientField& field) {
  SamplingSet s;
  s.box = field.domain().box;
  s.T = field.horizon();
  s.space_nodes = SamplingSet::default_space_nodes(field.dim());
  return s;
}

} // namespace cordes
