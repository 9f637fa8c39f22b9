#pragma once

// Spatial mollification of (b̄, f, λ) with the bump (1 − |u|²/ε²)³ and the
// six sampled moduli of smoothness/approximation.

#include "cordes/decompose.hpp"
#include "cordes/field.hpp"

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

namespace cordes {

/// Midpoint tensor quadrature of the normalized bump on the ball of radius ε.
struct KernelQuadrature {
  int n = 0;
  double eps = 0.0;
  std::vector<double> offsets; // point-major, n per point
  std::vector<double> weights; // sum to 1

  std::size_t size() const { return weights.size(); }

  static int default_points(int n) { return n == 1 ? 41 : n == 2 ? 21 : n == 3 ? 11 : 7; }

  static KernelQuadrature build(int n, double eps, int q = 0) {
    if (!(eps > 0.0)) throw std::invalid_argument("mollification radius must be positive");
    if (q <= 0) q = default_points(n);
    KernelQuadrature k;
    k.n = n;
    k.eps = eps;
    std::vector<int> idx(static_cast<std::size_t>(n), 0);
    std::vector<double> u(static_cast<std::size_t>(n));
    double total = 0.0;
    for (;;) {
      double r2 = 0.0;
      for (int a = 0; a < n; ++a) {
        u[static_cast<std::size_t>(a)] = -eps + (idx[static_cast<std::size_t>(a)] + 0.5) * 2.0 * eps / q;
        r2 += u[static_cast<std::size_t>(a)] * u[static_cast<std::size_t>(a)];
      }
      const double s = 1.0 - r2 / (eps * eps);
      if (s > 0.0) {
        const double w = s * s * s;
        k.offsets.insert(k.offsets.end(), u.begin(), u.end());
        k.weights.push_back(w);
        total += w;
      }
      int a = 0;
      while (a < n && ++idx[static_cast<std::size_t>(a)] == q) idx[static_cast<std::size_t>(a++)] = 0;
      if (a == n) break;
    }
    for (double& w : k.weights) w /= total;
    return k;
  }
};

struct Moduli {
  double nu_b = 0.0, nu_b_bar = 0.0;
  double nu_f = 0.0, nu_f_bar = 0.0;
  double nu_lambda = 0.0, nu_lambda_bar = 0.0;
  double r = 1.0;
  std::size_t samples = 0;
};

/// b^(ε), f^(ε), λ^(ε): space convolutions of b̄, f, λ (the raw expressions,
/// not the masked fields) with the bump kernel. Constant entries are passed
/// through unchanged.
class MollifiedField {
public:
  MollifiedField(const CoefficientField& field, const Decomposition& d, double eps, Box D1, int q = 0)
      : field_(&field), d_(&d), eps_(eps), D1_(std::move(D1)), kernel_(KernelQuadrature::build(field.dim(), eps, q)) {
    if (D1_.dim() != field.dim()) throw FieldError("D1 dimension mismatch");
  }

  double eps() const { return eps_; }
  const Box& D1() const { return D1_; }
  double r() const { return std::max(1.0, field_->dim() / 2.0); }
  const CoefficientField& field() const { return *field_; }
  const Decomposition& decomposition() const { return *d_; }

  Matrix b_eps(std::span<const double> x, double t) const {
    const int n = field_->dim();
    if (d_->kind != SplitKind::Explicit) return d_->bbar_const;
    Matrix m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) m(i, j) = m(j, i) = smooth(d_->bbar_fields[static_cast<std::size_t>(i * n + j)], x, t);
    return m;
  }

  Vector f_eps(std::span<const double> x, double t) const {
    Vector v(field_->dim());
    for (int i = 0; i < field_->dim(); ++i) v(i) = smooth(field_->f_entry(i), x, t);
    return v;
  }

  Complex lambda_eps(std::span<const double> x, double t) const {
    return {smooth(field_->lambda_re(), x, t), smooth(field_->lambda_im(), x, t)};
  }

  /// Smoothed coefficients, zero outside D × [0, T] like the field itself.
  CoefficientValues eval(std::span<const double> x, double t) const {
    if (!field_->inside(x, t)) {
      CoefficientValues v;
      v.b = Matrix::Zero(field_->dim(), field_->dim());
      v.f = Vector::Zero(field_->dim());
      return v;
    }
    return {b_eps(x, t), f_eps(x, t), lambda_eps(x, t)};
  }

  /// Moduli on the sampling set; derivatives by central differences with step ε/8;
  /// L_n / L_r norms on Q₁ by the midpoint rule on a (space_nodes−1)^n × time grid.
  Moduli moduli(const SamplingSet& samples) const {
    const int n = field_->dim();
    Moduli out;
    out.r = r();
    const double step = eps_ / 8.0;
    const bool dep = field_->time_dependent() || d_->bbar_time_dependent();
    std::vector<double> xp(static_cast<std::size_t>(n)), xm(static_cast<std::size_t>(n));
    samples.for_each(dep, [&](std::span<const double> x, double t) {
      ++out.samples;
      const Matrix be = b_eps(x, t);
      out.nu_b = std::max(out.nu_b, (be - d_->bbar_at(x, t)).norm());
      double db = 0.0, df = 0.0, dl = 0.0;
      for (int a = 0; a < n; ++a) {
        std::copy(x.begin(), x.end(), xp.begin());
        std::copy(x.begin(), x.end(), xm.begin());
        xp[static_cast<std::size_t>(a)] += step;
        xm[static_cast<std::size_t>(a)] -= step;
        db += ((b_eps(xp, t) - b_eps(xm, t)) / (2 * step)).squaredNorm();
        df += ((f_eps(xp, t) - f_eps(xm, t)) / (2 * step)).squaredNorm();
        dl += std::norm((lambda_eps(xp, t) - lambda_eps(xm, t)) / (2 * step));
      }
      out.nu_b_bar = std::max(out.nu_b_bar, std::sqrt(db));
      out.nu_f_bar = std::max(out.nu_f_bar, std::sqrt(df));
      out.nu_lambda_bar = std::max(out.nu_lambda_bar, std::sqrt(dl));
      if (!D1_.interior(x)) {
        const auto raw = field_->eval_raw(x, t);
        out.nu_f = std::max(out.nu_f, (f_eps(x, t) - raw.f).norm());
        out.nu_lambda = std::max(out.nu_lambda, std::abs(lambda_eps(x, t) - raw.lambda));
      }
    });

    const int cells = std::max(2, samples.space_nodes - 1);
    const int tcells = dep ? std::max(1, samples.time_nodes) : 1;
    double If = 0.0, Il = 0.0, vol = 1.0;
    for (int a = 0; a < n; ++a) vol *= (D1_.hi[static_cast<std::size_t>(a)] - D1_.lo[static_cast<std::size_t>(a)]) / cells;
    vol *= samples.T / tcells;
    std::vector<int> idx(static_cast<std::size_t>(n), 0);
    std::vector<double> x(static_cast<std::size_t>(n));
    for (int k = 0; k < tcells; ++k) {
      const double t = samples.T * (k + 0.5) / tcells;
      std::fill(idx.begin(), idx.end(), 0);
      for (;;) {
        for (int a = 0; a < n; ++a) {
          const auto ua = static_cast<std::size_t>(a);
          x[ua] = D1_.lo[ua] + (idx[ua] + 0.5) * (D1_.hi[ua] - D1_.lo[ua]) / cells;
        }
        const auto raw = field_->eval_raw(x, t);
        If += std::pow((f_eps(x, t) - raw.f).norm(), n) * vol;
        Il += std::pow(std::abs(lambda_eps(x, t) - raw.lambda), out.r) * vol;
        int a = 0;
        while (a < n && ++idx[static_cast<std::size_t>(a)] == cells) idx[static_cast<std::size_t>(a++)] = 0;
        if (a == n) break;
      }
    }
    out.nu_f += std::pow(If, 1.0 / n);
    out.nu_lambda += std::pow(Il, 1.0 / out.r);
    return out;
  }

private:
  const CoefficientField* field_;
  const Decomposition* d_;
  double eps_;
  Box D1_;
  KernelQuadrature kernel_;

  double smooth(const ScalarField& s, std::span<const double> x, double t) const {
    if (s.is_constant()) return s.eval(x, t);
    const int n = kernel_.n;
    std::vector<double> y(static_cast<std::size_t>(n));
    double acc = 0.0;
    for (std::size_t p = 0; p < kernel_.size(); ++p) {
      for (int a = 0; a < n; ++a)
        y[static_cast<std::size_t>(a)] = x[static_cast<std::size_t>(a)] - kernel_.offsets[p * static_cast<std::size_t>(n) + static_cast<std::size_t>(a)];
      acc += kernel_.weights[p] * s.eval(y, t);
    }
    return acc;
  }
};

} // namespace cordes
