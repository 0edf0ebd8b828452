#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <utility>

#include "hybridckf/errors.hpp"
#include "hybridckf/rng.hpp"

namespace hybridckf {

// Dense symmetric matrix; symmetrized on construction so downstream code can
// rely on exact entry symmetry.
class SymmetricMatrix {
 public:
  explicit SymmetricMatrix(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols() || m.rows() < 1) {
      throw LengthMismatch("SymmetricMatrix requires a square matrix of dim >= 1");
    }
    m_ = 0.5 * (m + m.transpose());
  }

  static SymmetricMatrix identity(int dim) {
    return SymmetricMatrix(Eigen::MatrixXd::Identity(dim, dim));
  }

  static SymmetricMatrix from_diagonal(const Eigen::VectorXd& d) {
    return SymmetricMatrix(Eigen::MatrixXd(d.asDiagonal()));
  }

  int dim() const { return static_cast<int>(m_.rows()); }
  const Eigen::MatrixXd& mat() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

 private:
  Eigen::MatrixXd m_;
};

// Lower-triangular Cholesky factor; strict upper part is zero.
class LowerTriangular {
 public:
  explicit LowerTriangular(Eigen::MatrixXd l) : m_(std::move(l)) {
    m_.triangularView<Eigen::StrictlyUpper>().setZero();
  }

  int dim() const { return static_cast<int>(m_.rows()); }
  const Eigen::MatrixXd& mat() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

 private:
  Eigen::MatrixXd m_;
};

// Unblocked lower Cholesky. Returns false as soon as a pivot is <= 0.
inline bool try_cholesky(const Eigen::MatrixXd& a, Eigen::MatrixXd& l) {
  const int n = static_cast<int>(a.rows());
  l.setZero(n, n);
  for (int j = 0; j < n; ++j) {
    const double d = a(j, j) - l.row(j).head(j).squaredNorm();
    if (d <= 0.0) return false;
    const double root = std::sqrt(d);
    l(j, j) = root;
    for (int i = j + 1; i < n; ++i) {
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / root;
    }
  }
  return true;
}

inline LowerTriangular cholesky(const SymmetricMatrix& m) {
  Eigen::MatrixXd l;
  if (!try_cholesky(m.mat(), l)) {
    throw NotPositiveDefinite("cholesky: pivot <= 0; matrix is not positive definite");
  }
  return LowerTriangular(std::move(l));
}

// Result of the jitter-repair loop. `rung` indexes the schedule
// {0, b*10^0, b*10^1, ..., b*10^6}: rung 0 means no jitter was needed.
struct SpdRepair {
  Eigen::MatrixXd matrix;
  Eigen::MatrixXd factor;
  int rung = 0;
  double lambda = 0.0;
};

inline constexpr int kJitterRungs = 8;  // lambda = 0 plus 7 powers of ten

// Symmetrize and add the smallest scheduled diagonal jitter that makes the
// Cholesky factorization succeed.
inline SpdRepair ensure_spd_factor(const SymmetricMatrix& m, double base_jitter = 1e-9) {
  if (!(base_jitter > 0.0)) {
    throw ConfigError("ensure_spd: base_jitter must be > 0");
  }
  Eigen::MatrixXd l;
  for (int rung = 0; rung < kJitterRungs; ++rung) {
    const double lambda = rung == 0 ? 0.0 : base_jitter * std::pow(10.0, rung - 1);
    Eigen::MatrixXd candidate = m.mat();
    if (lambda > 0.0) candidate.diagonal().array() += lambda;
    if (try_cholesky(candidate, l)) {
      return SpdRepair{std::move(candidate), std::move(l), rung, lambda};
    }
  }
  throw StabilizationFailed("ensure_spd: no jitter level up to base*1e6 produced an SPD matrix");
}

inline SymmetricMatrix ensure_spd(const SymmetricMatrix& m, double base_jitter = 1e-9) {
  return SymmetricMatrix(ensure_spd_factor(m, base_jitter).matrix);
}

// Solve (L L^T) x = b by forward/back substitution.
inline Eigen::VectorXd solve_cholesky(const Eigen::MatrixXd& l, const Eigen::VectorXd& b) {
  const int n = static_cast<int>(l.rows());
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    y(i) = (b(i) - l.row(i).head(i).dot(y.head(i))) / l(i, i);
  }
  Eigen::VectorXd x(n);
  for (int i = n - 1; i >= 0; --i) {
    x(i) = (y(i) - l.col(i).tail(n - i - 1).dot(x.tail(n - i - 1))) / l(i, i);
  }
  return x;
}

inline Eigen::MatrixXd solve_cholesky(const Eigen::MatrixXd& l, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd x(b.rows(), b.cols());
  for (int c = 0; c < b.cols(); ++c) {
    x.col(c) = solve_cholesky(l, Eigen::VectorXd(b.col(c)));
  }
  return x;
}

// Componentwise Gaussian draw: mean[i] + sqrt(cov_diag[i]) * z_i from a
// seeded standard-normal stream. Deterministic per seed.
inline Eigen::VectorXd draw_gaussian(const Eigen::VectorXd& mean,
                                     const Eigen::VectorXd& cov_diag,
                                     std::uint64_t seed) {
  if (mean.size() != cov_diag.size()) {
    throw LengthMismatch("draw_gaussian: mean and cov_diag lengths differ");
  }
  if ((cov_diag.array() < 0.0).any()) {
    throw ConfigError("draw_gaussian: negative variance");
  }
  NormalStream stream(seed);
  Eigen::VectorXd out(mean.size());
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    out(i) = mean(i) + std::sqrt(cov_diag(i)) * stream.next();
  }
  return out;
}

}  // namespace hybridckf
