#pragma once

// Small dense symmetric eigenproblems by cyclic Jacobi rotations.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace cordes {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline double max_asymmetry(const Matrix& m) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = i + 1; j < m.cols(); ++j) worst = std::max(worst, std::abs(m(i, j) - m(j, i)));
  return worst;
}

inline void require_symmetric(const Matrix& m, double tol = 1e-12) {
  if (m.rows() != m.cols()) throw std::invalid_argument("matrix is not square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if (max_asymmetry(m) > tol * scale) throw std::invalid_argument("matrix is not symmetric");
}

struct SymmetricEigen {
  Vector values;  // ascending
  Matrix vectors; // columns, orthonormal
  int sweeps = 0;
};

/// Cyclic Jacobi; stops once the off-diagonal Frobenius norm is below
/// `tol` times the matrix Frobenius norm.
inline SymmetricEigen jacobi_eigen(const Matrix& input, double tol = 1e-12, int max_sweeps = 100) {
  require_symmetric(input);
  const Eigen::Index n = input.rows();
  Matrix a = 0.5 * (input + input.transpose());
  Matrix v = Matrix::Identity(n, n);
  const double scale = a.norm();

  auto off_norm = [&] {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  int sweep = 0;
  for (; sweep < max_sweeps && off_norm() > tol * scale && scale > 0.0; ++sweep) {
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto i, auto j) { return a(i, i) < a(j, j); });
  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.values(k) = a(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(k)]);
    out.vectors.col(k) = v.col(order[static_cast<std::size_t>(k)]);
  }
  out.sweeps = sweep;
  return out;
}

inline std::vector<double> symmetric_eigenvalues(const Matrix& m) {
  const auto e = jacobi_eigen(m);
  return {e.values.data(), e.values.data() + e.values.size()};
}

/// Symmetric square root of a positive semi-definite matrix. Eigenvalues in
/// (-tol·|m|, 0) are treated as zero.
inline Matrix symmetric_sqrt(const Matrix& m, double tol = 1e-12) {
  const auto e = jacobi_eigen(m);
  const double scale = std::max(1.0, e.values.cwiseAbs().maxCoeff());
  Vector root(e.values.size());
  for (Eigen::Index k = 0; k < e.values.size(); ++k) {
    if (e.values(k) < -tol * scale) throw std::domain_error("matrix is not positive semi-definite");
    root(k) = std::sqrt(std::max(0.0, e.values(k)));
  }
  return e.vectors * root.asDiagonal() * e.vectors.transpose();
}

} // namespace cordes
