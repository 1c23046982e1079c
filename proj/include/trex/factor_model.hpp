#pragma once

// Low-rank-plus-diagonal covariance models Sigma = F F^T + diag(d) and the
// linear algebra built on top of them: inverse applications through the
// rank-r inversion identity, log-determinants, Mahalanobis distances, the
// Tyler objective, and the angular central Gaussian density.
//
// Nothing here ever materializes an n x n matrix except covariance(), which
// exists for reports and metrics only.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <utility>

#include "trex/errors.hpp"

namespace trex {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Factor model parameters: loadings F (n x r) and idiosyncratic variances
/// d (length n, strictly positive). Immutable after construction.
class FactorModel {
 public:
  FactorModel(Matrix loadings, Vector diag_vars)
      : F_(std::move(loadings)), d_(std::move(diag_vars)) {
    if (F_.rows() != d_.size()) {
      throw ValidationError("factor model: F has " + std::to_string(F_.rows()) +
                            " rows but d has " + std::to_string(d_.size()) +
                            " entries");
    }
    if (F_.cols() > F_.rows()) {
      throw ValidationError("factor model: rank " + std::to_string(F_.cols()) +
                            " exceeds dimension " + std::to_string(F_.rows()));
    }
    for (Index i = 0; i < d_.size(); ++i) {
      if (!(d_[i] > 0.0)) {
        throw ValidationError("factor model: d[" + std::to_string(i) +
                              "] = " + std::to_string(d_[i]) +
                              " is not strictly positive");
      }
    }
  }

  Index dim() const { return F_.rows(); }
  Index rank() const { return F_.cols(); }
  const Matrix& F() const { return F_; }
  const Vector& d() const { return d_; }

  /// Dense Sigma = F F^T + diag(d). For reports and error metrics; the
  /// estimators never call this.
  Matrix covariance() const {
    Matrix sigma = F_ * F_.transpose();
    sigma.diagonal() += d_;
    return sigma;
  }

 private:
  Matrix F_;
  Vector d_;
};

/// m samples of dimension n, stored as columns. Rejects zero samples at
/// construction; `normalized` asserts unit Euclidean norms within 1e-12.
class DataMatrix {
 public:
  explicit DataMatrix(Matrix samples_as_columns, bool normalized = false)
      : X_(std::move(samples_as_columns)), normalized_(normalized) {
    if (X_.rows() < 1 || X_.cols() < 1) {
      throw ValidationError("data matrix: need at least one sample of dimension >= 1");
    }
    for (Index i = 0; i < X_.cols(); ++i) {
      const double norm = X_.col(i).norm();
      if (norm == 0.0) {
        throw ValidationError("data matrix: sample " + std::to_string(i) +
                              " is the zero vector");
      }
      if (normalized_ && std::abs(norm - 1.0) > 1e-12) {
        throw ValidationError("data matrix: sample " + std::to_string(i) +
                              " marked normalized but has norm " + std::to_string(norm));
      }
    }
  }

  /// CSV convention: one sample per row.
  static DataMatrix from_rows(const Matrix& samples_as_rows) {
    return DataMatrix(samples_as_rows.transpose());
  }

  Index dim() const { return X_.rows(); }    // n
  Index count() const { return X_.cols(); }  // m
  const Matrix& samples() const { return X_; }
  bool normalized() const { return normalized_; }

  /// Unit-norm copy plus the original sample norms.
  std::pair<DataMatrix, Vector> normalized_copy() const {
    Vector norms = X_.colwise().norm();
    Matrix Xn = X_.array().rowwise() / norms.transpose().array();
    return {DataMatrix(std::move(Xn), true), std::move(norms)};
  }

 private:
  Matrix X_;
  bool normalized_;
};

namespace detail {

/// One-shot factorization of Sigma = F F^T + D through the rank-r inversion
/// identity: Sigma^{-1} = D^{-1} - D^{-1} F C^{-1} F^T D^{-1} with the
/// capacitance C = I + F^T D^{-1} F factorized by Cholesky. Building it
/// costs O(n r^2 + r^3); solves cost O(n r) per column.
struct WoodburyFactor {
  Vector dinv;        // 1/d
  Matrix DinvF;       // D^{-1} F, n x r
  Eigen::LLT<Matrix> cap_llt;
  double logdet_sigma = 0.0;

  explicit WoodburyFactor(const FactorModel& model) {
    dinv = model.d().cwiseInverse();
    DinvF = dinv.asDiagonal() * model.F();
    const Index r = model.rank();
    Matrix cap = Matrix::Identity(r, r);
    cap.noalias() += model.F().transpose() * DinvF;
    cap_llt.compute(cap);
    if (cap_llt.info() != Eigen::Success) {
      std::ostringstream msg;
      msg << "capacitance matrix I + F'D^-1F is numerically non-positive-definite"
          << " (n=" << model.dim() << ", r=" << r
          << ", min d=" << model.d().minCoeff() << ")";
      throw NumericalError(msg.str());
    }
    logdet_sigma = model.d().array().log().sum() +
                   2.0 * Matrix(cap_llt.matrixL()).diagonal().array().log().sum();
  }

  /// Sigma^{-1} X for a column batch, O(n m r).
  Matrix solve(const Matrix& X) const {
    Matrix U = dinv.asDiagonal() * X;
    Matrix V = DinvF.transpose() * X;  // r x m
    Matrix W = cap_llt.solve(V);
    U.noalias() -= DinvF * W;
    return U;
  }

  /// Columnwise x^T Sigma^{-1} x. The subtracted term goes through a
  /// triangular solve so the quadratic form stays a difference of squares.
  Vector maha(const Matrix& X) const {
    Vector base = (X.array().square().colwise() * dinv.array()).colwise().sum();
    Matrix V = DinvF.transpose() * X;
    Matrix Y = cap_llt.matrixL().solve(V);
    Vector correction = Y.array().square().colwise().sum();
    return base - correction;
  }
};

inline constexpr double kVarianceFloorRatio = 1e-8;

/// Relative positivity floor for idiosyncratic variances: d_i is clamped to
/// at least kVarianceFloorRatio times the mean diagonal of F F^T + D. Tying
/// the floor to the full diagonal scale keeps Sigma invertible even when a
/// degenerate fit sends all of d toward zero at once.
inline Vector apply_variance_floor(const Matrix& F, Vector d) {
  const double scale = (F.array().square().rowwise().sum() + d.array()).mean();
  if (!(scale > 0.0)) {
    throw NumericalError("variance floor: model has collapsed to zero scale");
  }
  const double floor = kVarianceFloorRatio * scale;
  return d.cwiseMax(floor);
}

}  // namespace detail

/// Columns (F F^T + D)^{-1} x_i for every sample, at O(n m r + r^3).
inline Matrix sigma_solve(const FactorModel& model, const DataMatrix& X) {
  if (model.dim() != X.dim()) {
    throw ValidationError("sigma_solve: model dimension " + std::to_string(model.dim()) +
                          " does not match data dimension " + std::to_string(X.dim()));
  }
  detail::WoodburyFactor wf(model);
  return wf.solve(X.samples());
}

/// log det(F F^T + D) = log det D + log det(I + F' D^-1 F), O(n r^2).
inline double logdet(const FactorModel& model) {
  return detail::WoodburyFactor(model).logdet_sigma;
}

/// Mahalanobis distances x_i' Sigma^{-1} x_i to the origin, one per sample.
inline Vector mahalanobis(const FactorModel& model, const DataMatrix& X) {
  if (model.dim() != X.dim()) {
    throw ValidationError("mahalanobis: dimension mismatch");
  }
  detail::WoodburyFactor wf(model);
  Vector m = wf.maha(X.samples());
  for (Index i = 0; i < m.size(); ++i) {
    if (!(m[i] > 0.0)) {
      throw NumericalError("mahalanobis: sample " + std::to_string(i) +
                           " produced non-positive quadratic form " + std::to_string(m[i]));
    }
  }
  return m;
}

/// Tyler's negative log-likelihood under the factor structure:
///   f(F, D) = log det(FF^T + D) + (n/m) sum_i log(x_i' Sigma^{-1} x_i).
inline double tyler_objective(const FactorModel& model, const DataMatrix& X) {
  const double n = static_cast<double>(X.dim());
  const double m = static_cast<double>(X.count());
  Vector maha = mahalanobis(model, X);
  return logdet(model) + (n / m) * maha.array().log().sum();
}

/// Log density of the angular central Gaussian at a unit vector x:
///   Gamma(n/2) / (2 pi^{n/2} sqrt(det Sigma)) * (x' Sigma^{-1} x)^{-n/2}.
inline double acg_log_density(const FactorModel& model, const Vector& x) {
  const double n = static_cast<double>(model.dim());
  if (x.size() != model.dim()) {
    throw ValidationError("acg_log_density: dimension mismatch");
  }
  if (std::abs(x.norm() - 1.0) > 1e-9) {
    throw ValidationError("acg_log_density: input has norm " + std::to_string(x.norm()) +
                          ", expected a unit vector");
  }
  detail::WoodburyFactor wf(model);
  const double maha = wf.maha(x)[0];
  if (!(maha > 0.0)) {
    throw NumericalError("acg_log_density: non-positive quadratic form");
  }
  return std::lgamma(n / 2.0) - std::log(2.0) - (n / 2.0) * std::log(M_PI) -
         0.5 * wf.logdet_sigma - (n / 2.0) * std::log(maha);
}

/// Log of the joint density of (direction, radius) under the latent model:
///   r^{n-1} / ((2 pi)^{n/2} sqrt(det Sigma)) * exp(-(r^2/2) x' Sigma^{-1} x).
inline double joint_log_density(const FactorModel& model, const Vector& x, double radius) {
  const double n = static_cast<double>(model.dim());
  if (x.size() != model.dim()) {
    throw ValidationError("joint_log_density: dimension mismatch");
  }
  if (std::abs(x.norm() - 1.0) > 1e-9) {
    throw ValidationError("joint_log_density: direction must be a unit vector");
  }
  if (!(radius > 0.0)) {
    throw ValidationError("joint_log_density: radius must be positive");
  }
  detail::WoodburyFactor wf(model);
  const double maha = wf.maha(x)[0];
  return (n - 1.0) * std::log(radius) - (n / 2.0) * std::log(2.0 * M_PI) -
         0.5 * wf.logdet_sigma - 0.5 * radius * radius * maha;
}

}  // namespace trex
