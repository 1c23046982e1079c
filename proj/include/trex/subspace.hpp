#pragma once

// Robust subspace recovery: Euclidean-median centering (Weiszfeld iteration
// with the Vardi-Zhang anchor fix), subspace extraction from a fitted factor
// model, PCA and spherical-PCA baselines, and projector-based distances.

#include <Eigen/Dense>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "trex/errors.hpp"
#include "trex/estimators.hpp"
#include "trex/factor_model.hpp"

namespace trex {

/// An r-dimensional subspace of R^n held as an orthonormal basis.
class Subspace {
 public:
  explicit Subspace(Matrix orthonormal_basis) : B_(std::move(orthonormal_basis)) {
    if (B_.cols() < 1 || B_.cols() > B_.rows()) {
      throw ValidationError("subspace: basis must have 1 <= r <= n columns");
    }
    Matrix gram = B_.transpose() * B_;
    if ((gram - Matrix::Identity(B_.cols(), B_.cols())).cwiseAbs().maxCoeff() > 1e-10) {
      throw ValidationError("subspace: basis columns are not orthonormal");
    }
  }

  Index dim() const { return B_.rows(); }   // ambient n
  Index rank() const { return B_.cols(); }  // r
  const Matrix& basis() const { return B_; }

 private:
  Matrix B_;
};

/// Orthonormal basis whose span contains the range of A (thin Householder Q).
inline Subspace orthonormal_range(const Matrix& A) {
  Eigen::HouseholderQR<Matrix> qr(A);
  Matrix Q = qr.householderQ() * Matrix::Identity(A.rows(), A.cols());
  return Subspace(std::move(Q));
}

struct MedianResult {
  Vector center;
  int iters = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // sum of distances, one entry per iterate
};

namespace detail {

inline double median_objective(const Matrix& X, const Vector& c) {
  return (X.colwise() - c).colwise().norm().sum();
}

}  // namespace detail

/// Euclidean (geometric) median by Weiszfeld iteration, initialized at the
/// coordinate-wise mean. An iterate landing on a data point takes the
/// Vardi-Zhang step: the point's own term leaves the update and the move is
/// damped by the leftover subgradient; if that subgradient fits inside the
/// unit ball the point is the median. Stops on ||c+ - c|| <= tol (1 + ||c||).
inline MedianResult euclidean_median(const DataMatrix& data, double tol = 1e-8,
                                     int max_iters = 1000) {
  if (!(tol > 0.0) || max_iters < 1) {
    throw ValidationError("euclidean_median: bad tolerance or iteration cap");
  }
  const Matrix& X = data.samples();
  const Index m = X.cols();
  MedianResult result;
  result.center = X.rowwise().mean();
  result.objective_trace.push_back(detail::median_objective(X, result.center));
  for (int k = 0; k < max_iters; ++k) {
    Vector numer = Vector::Zero(X.rows());
    double denom = 0.0;
    Vector pull = Vector::Zero(X.rows());  // subgradient direction from non-anchor points
    bool anchored = false;
    for (Index i = 0; i < m; ++i) {
      Vector diff = X.col(i) - result.center;
      const double dist = diff.norm();
      if (dist <= 1e-12) {
        anchored = true;
        continue;
      }
      numer += X.col(i) / dist;
      denom += 1.0 / dist;
      pull += diff / dist;
    }
    Vector next;
    if (denom == 0.0) {
      // every sample coincides with the center
      result.converged = true;
      break;
    }
    if (anchored) {
      const double pull_norm = pull.norm();
      if (pull_norm <= 1.0) {
        // the anchor's subdifferential absorbs the pull: the data point is the median
        result.converged = true;
        break;
      }
      Vector weiszfeld = numer / denom;
      const double damping = std::min(1.0, 1.0 / pull_norm);
      next = (1.0 - damping) * weiszfeld + damping * result.center;
      // guard against a zero-length damped step stalling on the anchor
      if ((next - result.center).norm() <= 1e-15 * (1.0 + result.center.norm())) {
        next = weiszfeld;
      }
    } else {
      next = numer / denom;
    }
    const double step = (next - result.center).norm();
    result.center = std::move(next);
    result.objective_trace.push_back(detail::median_objective(X, result.center));
    result.iters = k + 1;
    if (step <= tol * (1.0 + result.center.norm())) {
      result.converged = true;
      break;
    }
  }
  return result;
}

/// Range of the loadings fitted by trex_fit on pre-centered data,
/// orthonormalized. Tall mode engages automatically when n > 4m.
inline Subspace trex_subspace(const DataMatrix& centered, Index r, EstimatorConfig cfg) {
  cfg.rank = r;
  auto [model, report] = trex_fit(centered, cfg);
  (void)report;
  return orthonormal_range(model.F());
}

/// Spherical PCA: project the (already centered) samples onto the unit
/// sphere, dropping samples at the center, and take the top-r principal
/// directions of the projected set.
inline Subspace spherical_pca(const DataMatrix& centered, Index r) {
  const Matrix& X = centered.samples();
  if (r < 1 || r > X.rows()) throw ValidationError("spherical_pca: rank out of range");
  std::vector<Index> keep;
  keep.reserve(static_cast<std::size_t>(X.cols()));
  for (Index i = 0; i < X.cols(); ++i) {
    if (X.col(i).norm() > 1e-12) keep.push_back(i);
  }
  if (keep.empty()) throw ValidationError("spherical_pca: all samples are at the center");
  Matrix Y(X.rows(), static_cast<Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    Y.col(static_cast<Index>(j)) = X.col(keep[j]) / X.col(keep[j]).norm();
  }
  if (r > std::min(Y.rows(), Y.cols())) {
    throw ValidationError("spherical_pca: rank exceeds the projected data rank");
  }
  Eigen::BDCSVD<Matrix> svd(Y, Eigen::ComputeThinU);
  return Subspace(svd.matrixU().leftCols(r));
}

/// Top-r left singular subspace of the mean-centered data. The dense route
/// eigendecomposes the covariance; the tall route (n >> m) takes a reduced
/// SVD of the centered data without forming an n x n matrix.
inline Subspace pca_subspace(const DataMatrix& data, Index r, Mode mode = Mode::Auto) {
  const Matrix& X = data.samples();
  const Index n = X.rows();
  const Index m = X.cols();
  if (r < 1) throw ValidationError("pca_subspace: rank must be >= 1");
  if (r > n) throw ValidationError("pca_subspace: rank exceeds ambient dimension");
  Vector mean = X.rowwise().mean();
  Matrix C = X.colwise() - mean;
  if (detail::resolve_mode(mode, n, m) == Mode::Tall) {
    Eigen::BDCSVD<Matrix> svd(C, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    const double cutoff = 1e-12 * sv[0];
    Index rank = 0;
    for (Index i = 0; i < sv.size(); ++i) {
      if (sv[i] > cutoff) ++rank;
    }
    if (r > rank) {
      throw ValidationError("pca_subspace: requested rank " + std::to_string(r) +
                            " exceeds data rank " + std::to_string(rank));
    }
    return Subspace(svd.matrixU().leftCols(r));
  }
  Matrix S = (C * C.transpose()) / static_cast<double>(m);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(S);
  if (eig.info() != Eigen::Success) {
    throw NumericalError("pca_subspace: eigendecomposition failed");
  }
  Vector vals = eig.eigenvalues().reverse();
  Matrix vecs = eig.eigenvectors().rowwise().reverse();
  const double cutoff = 1e-12 * std::max(vals[0], 0.0);
  Index rank = 0;
  for (Index i = 0; i < vals.size(); ++i) {
    if (vals[i] > cutoff) ++rank;
  }
  if (r > rank) {
    throw ValidationError("pca_subspace: requested rank " + std::to_string(r) +
                          " exceeds data rank " + std::to_string(rank));
  }
  return Subspace(vecs.leftCols(r));
}

/// Frobenius norm of the projector difference ||P_A - P_B||_F. Uses the
/// residual form rA - rB + 2 ||B - A(A'B)||_F^2, which stays accurate for
/// nearly equal subspaces where the raw Gram identity cancels catastrophically.
inline double subspace_distance(const Subspace& A, const Subspace& B) {
  if (A.dim() != B.dim()) {
    throw ValidationError("subspace_distance: ambient dimensions differ");
  }
  Matrix C = B.basis() - A.basis() * (A.basis().transpose() * B.basis());
  const double sq = static_cast<double>(A.rank()) - static_cast<double>(B.rank()) +
                    2.0 * C.squaredNorm();
  return std::sqrt(std::max(sq, 0.0));
}

/// Residual norms ||(I - BB')(x_i - center)||, O(nr) per sample.
inline Vector point_to_subspace_distances(const DataMatrix& data, const Subspace& S,
                                          const Vector& center) {
  if (data.dim() != S.dim() || center.size() != S.dim()) {
    throw ValidationError("point_to_subspace_distances: dimension mismatch");
  }
  const Matrix& X = data.samples();
  Vector out(X.cols());
  for (Index i = 0; i < X.cols(); ++i) {
    Vector v = X.col(i) - center;
    v.noalias() -= S.basis() * (S.basis().transpose() * v);
    out[i] = v.norm();
  }
  return out;
}

}  // namespace trex
