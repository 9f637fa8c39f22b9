#pragma once

// Factor-once/solve-many wrapper: sparse LU for small systems, BiCGSTAB with
// an incomplete-LU preconditioner above kDirectLimit unknowns.

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <memory>
#include <sstream>
#include <stdexcept>

namespace cordes {

class SolveError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

template <class S>
class StepSolver {
public:
  using SpMat = Eigen::SparseMatrix<S>;
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

  static constexpr Eigen::Index kDirectLimit = 2000;
  static constexpr double kTolerance = 1e-10;

  void compute(const SpMat& a) {
    a_ = a;
    at_.reset();
    direct_ = a.rows() < kDirectLimit;
    if (direct_) {
      lu_ = std::make_unique<Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>>>();
      lu_->compute(a_);
      if (lu_->info() != Eigen::Success) throw SolveError("sparse LU factorization failed: " + lu_->lastErrorMessage());
    } else {
      it_ = make_iterative(a_);
    }
  }

  Vec solve(const Vec& b) const {
    if (direct_) return checked(a_, lu_->solve(b), b);
    return iterate(*it_, a_, b);
  }

  /// Solves Aᵀ x = b (plain transpose, no conjugation).
  Vec solve_transpose(const Vec& b) const {
    if (direct_) {
      if (!at_) at_ = std::make_unique<SpMat>(a_.transpose());
      return checked(*at_, lu_->transpose().solve(b), b);
    }
    if (!at_) {
      at_ = std::make_unique<SpMat>(a_.transpose());
      it_t_ = make_iterative(*at_);
    }
    return iterate(*it_t_, *at_, b);
  }

  bool direct() const { return direct_; }
  int last_iterations() const { return iterations_; }
  double last_residual() const { return residual_; }

private:
  using Iterative = Eigen::BiCGSTAB<SpMat, Eigen::IncompleteLUT<S>>;

  SpMat a_;
  bool direct_ = true;
  std::unique_ptr<Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>>> lu_;
  std::unique_ptr<Iterative> it_;
  mutable std::unique_ptr<SpMat> at_;
  mutable std::unique_ptr<Iterative> it_t_;
  mutable int iterations_ = 0;
  mutable double residual_ = 0.0;

  static std::unique_ptr<Iterative> make_iterative(const SpMat& a) {
    auto it = std::make_unique<Iterative>();
    it->setTolerance(kTolerance);
    it->setMaxIterations(static_cast<Eigen::Index>(10 * a.rows()));
    it->compute(a);
    if (it->info() != Eigen::Success) throw SolveError("preconditioner setup failed");
    return it;
  }

  Vec checked(const SpMat& a, Vec x, const Vec& b) const {
    iterations_ = 1;
    const double bn = b.norm();
    residual_ = bn > 0 ? (a * x - b).norm() / bn : (a * x).norm();
    if (!x.allFinite()) throw SolveError("linear solve produced non-finite values");
    return x;
  }

  Vec iterate(const Iterative& it, const SpMat& a, const Vec& b) const {
    Vec x = it.solve(b);
    iterations_ = static_cast<int>(it.iterations());
    const double bn = b.norm();
    residual_ = bn > 0 ? (a * x - b).norm() / bn : (a * x).norm();
    if (it.info() != Eigen::Success && residual_ > kTolerance) {
      std::ostringstream os;
      os << "iterative solve did not converge: " << iterations_ << " iterations, relative residual " << residual_;
      throw SolveError(os.str());
    }
    return x;
  }
};

} // namespace cordes
