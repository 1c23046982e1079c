#pragma once

// Estimators for factor-structured scatter matrices:
//
//  * trex_fit            — EM for Tyler's ML problem under Sigma = FF^T + D.
//                          E-step: weighted scatter with weights n / maha_i.
//                          M-step: Gaussian factor-analysis subproblem solved
//                          by Rubin & Thayer inner EM iterations.
//  * gfa_fit             — the Gaussian baseline: Rubin & Thayer EM on the
//                          sample covariance.
//  * tyler_fixed_point   — the classical unstructured fixed-point iteration
//                          with per-step trace normalization.
//  * pca_init            — initialization from PCA of the correlation matrix,
//                          with a reduced-SVD route for n >> m.
//
// Dense mode materializes the n x n weighted scatter; tall mode keeps it as
// (X, w) and routes every product through the data matrix so no n x n matrix
// is ever formed.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "trex/errors.hpp"
#include "trex/factor_model.hpp"

namespace trex {

enum class Mode { Dense, Tall, Auto };
enum class Termination { ToleranceMet, MaxIters, Stalled };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::ToleranceMet: return "tolerance-met";
    case Termination::MaxIters: return "max-iters";
    case Termination::Stalled: return "stalled";
  }
  return "unknown";
}

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::Dense: return "dense";
    case Mode::Tall: return "tall";
    case Mode::Auto: return "auto";
  }
  return "unknown";
}

struct EstimatorConfig {
  Index rank = 1;
  int max_outer_iters = 100;
  int max_inner_iters = 50;   // Rubin & Thayer iterations inside one M-step
  double tol = 1e-6;          // relative change of the outer objective
  double inner_tol = 1e-8;    // relative change of the M-step surrogate
  Mode mode = Mode::Auto;
  std::uint64_t seed = 0;

  void validate() const {
    if (rank < 1) throw ValidationError("config: rank must be >= 1");
    if (max_outer_iters < 1 || max_inner_iters < 1) {
      throw ValidationError("config: iteration caps must be >= 1");
    }
    if (!(tol > 0.0) || !(inner_tol > 0.0)) {
      throw ValidationError("config: tolerances must be positive");
    }
  }
};

struct FitReport {
  std::vector<double> objective_trace;
  int outer_iters = 0;
  Termination termination = Termination::MaxIters;
  double elapsed_seconds = 0.0;
  double e_step_seconds = 0.0;
  double m_step_seconds = 0.0;
  Mode resolved_mode = Mode::Dense;
  Vector original_norms;              // sample norms recorded before normalization
  std::vector<std::string> warnings;
};

/// Relative-change termination rule on the last two objective values. The
/// denominator is floored at 1e-12 so a near-zero objective cannot satisfy
/// the criterion through a blown-up ratio.
inline bool terminate(const std::vector<double>& trace, double eps) {
  if (trace.size() < 2) {
    throw ValidationError("terminate: need at least two objective values");
  }
  const double prev = trace[trace.size() - 2];
  const double curr = trace.back();
  return std::abs(curr - prev) <= eps * std::max(std::abs(prev), 1e-12);
}

/// Weighted scatter S = (1/m) sum_i w_i x_i x_i^T, either materialized
/// (dense mode) or kept as the pair (X, w) (tall mode). The implicit form
/// borrows the data matrix; it must outlive the scatter.
class WeightedScatter {
 public:
  static WeightedScatter from_dense(Matrix S) {
    WeightedScatter ws;
    ws.dense_ = std::move(S);
    return ws;
  }

  static WeightedScatter from_weights(const DataMatrix& data, Vector weights) {
    if (weights.size() != data.count()) {
      throw ValidationError("weighted scatter: weight count mismatch");
    }
    for (Index i = 0; i < weights.size(); ++i) {
      if (!(weights[i] > 0.0)) {
        throw NumericalError("weighted scatter: weight " + std::to_string(i) +
                             " is not strictly positive");
      }
    }
    WeightedScatter ws;
    ws.data_ = &data;
    ws.weights_ = std::move(weights);
    return ws;
  }

  bool is_dense() const { return dense_.has_value(); }
  Index dim() const { return is_dense() ? dense_->rows() : data_->dim(); }
  const Matrix& dense() const { return *dense_; }
  const Vector& weights() const { return weights_; }

  /// S * A without forming S in the implicit case: X (w o (X^T A)) / m.
  Matrix multiply(const Matrix& A) const {
    if (is_dense()) return *dense_ * A;
    const Matrix& X = data_->samples();
    Matrix G = X.transpose() * A;                       // m x r
    G.array().colwise() *= weights_.array();
    return (X * G) / static_cast<double>(data_->count());
  }

  Vector diagonal() const {
    if (is_dense()) return dense_->diagonal();
    const Matrix& X = data_->samples();
    return (X.array().square().matrix() * weights_) / static_cast<double>(data_->count());
  }

  double trace() const { return diagonal().sum(); }

 private:
  WeightedScatter() = default;
  std::optional<Matrix> dense_;
  const DataMatrix* data_ = nullptr;
  Vector weights_;
};

/// E-step: conditional-expectation weights w_i = n / (x_i' Sigma^{-1} x_i)
/// and the weighted scatter they induce. Dense mode costs O(n m r + n^2 m);
/// tall mode stops at the weights, O(n m r).
inline WeightedScatter e_step(const FactorModel& model, const DataMatrix& X,
                              Mode mode = Mode::Dense) {
  const double n = static_cast<double>(X.dim());
  Vector maha = mahalanobis(model, X);
  Vector w = n * maha.cwiseInverse();
  if (mode == Mode::Tall) {
    return WeightedScatter::from_weights(X, std::move(w));
  }
  const Matrix& S = X.samples();
  Matrix scatter = (S * w.asDiagonal() * S.transpose()) / static_cast<double>(X.count());
  scatter = 0.5 * (scatter + scatter.transpose()).eval();
  return WeightedScatter::from_dense(std::move(scatter));
}

namespace detail {

/// Gaussian surrogate log det(Sigma) + Tr(Sigma^{-1} S), evaluated without
/// forming Sigma or touching S beyond one multiply.
inline double gaussian_surrogate(const WeightedScatter& S, const WoodburyFactor& wf) {
  const Vector diag = S.diagonal();
  double tr = (diag.array() * wf.dinv.array()).sum();
  Matrix SG = S.multiply(wf.DinvF);                  // n x r
  Matrix M = wf.DinvF.transpose() * SG;              // r x r
  tr -= wf.cap_llt.solve(M).trace();
  return wf.logdet_sigma + tr;
}

/// One Rubin & Thayer update for minimize log det(Sigma) + Tr(Sigma^{-1} S)
/// over Sigma = F F^T + diag(d):
///   H = (I + F'D^-1F)^{-1},  A = D^-1 F H,  B = H + A'SA,
///   F+ = SA B^{-1},          d+ = diag(S - 2 SA F+' + F+ B F+').
inline FactorModel rubin_thayer_update(const WeightedScatter& S, const FactorModel& model,
                                       const WoodburyFactor& wf) {
  const Index r = model.rank();
  Matrix H = wf.cap_llt.solve(Matrix::Identity(r, r));
  Matrix A = wf.DinvF * H;                            // n x r
  Matrix SA = S.multiply(A);                          // n x r
  Matrix B = H + A.transpose() * SA;
  B = 0.5 * (B + B.transpose()).eval();
  Eigen::LLT<Matrix> bllt(B);
  if (bllt.info() != Eigen::Success) {
    throw NumericalError("m_step: matrix H + A'SA is numerically singular");
  }
  Matrix Fnext = bllt.solve(SA.transpose()).transpose();  // SA B^{-1}
  Vector dnext = S.diagonal();
  dnext.array() -= 2.0 * (SA.array() * Fnext.array()).rowwise().sum();
  dnext.array() += ((Fnext * B).array() * Fnext.array()).rowwise().sum();
  dnext = apply_variance_floor(Fnext, std::move(dnext));
  return FactorModel(std::move(Fnext), std::move(dnext));
}

struct InnerEmResult {
  FactorModel model;
  std::vector<double> surrogate_trace;
  Termination termination;
};

inline InnerEmResult rubin_thayer_em(const WeightedScatter& S, FactorModel model,
                                     double tol, int max_iters) {
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(max_iters) + 1);
  Termination term = Termination::MaxIters;
  for (int k = 0;; ++k) {
    WoodburyFactor wf(model);
    trace.push_back(gaussian_surrogate(S, wf));
    if (!std::isfinite(trace.back())) {
      throw NumericalError("inner EM: surrogate objective is not finite");
    }
    if (k > 0 && terminate(trace, tol)) {
      term = Termination::ToleranceMet;
      break;
    }
    if (k == max_iters) break;
    model = rubin_thayer_update(S, model, wf);
  }
  return {std::move(model), std::move(trace), term};
}

inline Mode resolve_mode(Mode mode, Index n, Index m) {
  if (mode != Mode::Auto) return mode;
  return n > 4 * m ? Mode::Tall : Mode::Dense;
}

}  // namespace detail

/// M-step: approximately minimize log det(Sigma) + Tr(Sigma^{-1} S_hat) over
/// factor models, warm-started at `init`, by inner Rubin & Thayer iterations.
inline FactorModel m_step(const WeightedScatter& S_hat, const FactorModel& init,
                          const EstimatorConfig& cfg) {
  if (S_hat.dim() != init.dim()) {
    throw ValidationError("m_step: scatter dimension does not match the model");
  }
  return detail::rubin_thayer_em(S_hat, init, cfg.inner_tol, cfg.max_inner_iters).model;
}

/// Mean-centered sample covariance (1/m) sum_i (x_i - mean)(x_i - mean)^T,
/// the input to the Gaussian baseline.
inline Matrix sample_covariance(const DataMatrix& X) {
  const Matrix& S = X.samples();
  Vector mean = S.rowwise().mean();
  Matrix C = S.colwise() - mean;
  return (C * C.transpose()) / static_cast<double>(X.count());
}

/// Second moment about the origin (1/m) X X^T; the scatter matrix the
/// zero-mean elliptical model is built on, and what pca_init decomposes.
inline Matrix second_moment(const DataMatrix& X) {
  const Matrix& S = X.samples();
  return (S * S.transpose()) / static_cast<double>(X.count());
}

namespace detail {

struct SpectralPair {
  Vector values;   // descending
  Matrix vectors;  // columns aligned with values
};

inline Index first_nonzero_row(const Matrix& vectors, Index col) {
  for (Index i = 0; i < vectors.rows(); ++i) {
    if (std::abs(vectors(i, col)) > 1e-12) return i;
  }
  return vectors.rows();
}

/// Descending eigenvalue order; ties broken by the ascending index of the
/// first nonzero eigenvector entry; each vector's largest-magnitude entry
/// made positive. Fixes the output of LAPACK's arbitrary choices.
inline SpectralPair canonicalize_spectrum(Vector values, Matrix vectors) {
  const Index k = values.size();
  std::vector<Index> order(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return first_nonzero_row(vectors, a) < first_nonzero_row(vectors, b);
  });
  SpectralPair out;
  out.values.resize(k);
  out.vectors.resize(vectors.rows(), k);
  for (Index j = 0; j < k; ++j) {
    const Index src = order[static_cast<std::size_t>(j)];
    out.values[j] = values[src];
    Vector v = vectors.col(src);
    Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v[imax] < 0.0) v = -v;
    out.vectors.col(j) = v;
  }
  return out;
}

inline void check_positive_variances(const Vector& diag) {
  for (Index i = 0; i < diag.size(); ++i) {
    if (!(diag[i] > 0.0)) {
      throw ValidationError("pca_init: coordinate " + std::to_string(i) +
                            " has zero variance");
    }
  }
}

/// Shared tail of both pca_init routes: given the spectrum of the correlation
/// matrix and the standard deviations s, build the initial factor model.
inline FactorModel assemble_pca_init(const SpectralPair& spec, const Vector& s, Index r) {
  const Index n = s.size();
  Matrix Fhat(n, r);
  for (Index j = 0; j < r; ++j) {
    const double lambda = j < spec.values.size() ? std::max(spec.values[j], 0.0) : 0.0;
    if (j < spec.vectors.cols()) {
      Fhat.col(j) = spec.vectors.col(j) * std::sqrt(lambda);
    } else {
      Fhat.col(j).setZero();
    }
  }
  Vector dhat = Vector::Ones(n) - Fhat.array().square().rowwise().sum().matrix();
  Matrix F0 = s.asDiagonal() * Fhat;
  Vector d0 = s.array().square() * dhat.array();
  d0 = apply_variance_floor(F0, std::move(d0));
  return FactorModel(std::move(F0), std::move(d0));
}

}  // namespace detail

/// PCA-of-the-correlation-matrix initialization from a covariance matrix:
/// R = diag(s)^-1 S diag(s)^-1, Fhat = Q_{1:r} Lambda_{1:r}^{1/2},
/// Dhat = diag(R - Fhat Fhat'), rescaled back by diag(s).
inline FactorModel pca_init_from_covariance(const Matrix& S, Index r) {
  if (S.rows() != S.cols()) throw ValidationError("pca_init: covariance must be square");
  if (r < 1 || r > S.rows()) {
    throw ValidationError("pca_init: rank must lie in [1, n]");
  }
  detail::check_positive_variances(S.diagonal());
  Vector s = S.diagonal().cwiseSqrt();
  Vector sinv = s.cwiseInverse();
  Matrix R = sinv.asDiagonal() * S * sinv.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(R);
  if (eig.info() != Eigen::Success) {
    throw NumericalError("pca_init: eigendecomposition failed");
  }
  auto spec = detail::canonicalize_spectrum(eig.eigenvalues(), eig.eigenvectors());
  return detail::assemble_pca_init(spec, s, r);
}

/// PCA initialization from data, decomposing the second moment about the
/// origin (the scatter target of the zero-mean model). The tall route
/// reproduces the dense result from a reduced SVD of the coordinate-scaled
/// data at O(n m^2) without forming an n x n matrix.
inline FactorModel pca_init(const DataMatrix& X, Index r, Mode mode = Mode::Auto) {
  const Index n = X.dim();
  const Index m = X.count();
  if (r < 1 || r > n) throw ValidationError("pca_init: rank must lie in [1, n]");
  if (detail::resolve_mode(mode, n, m) == Mode::Dense) {
    return pca_init_from_covariance(second_moment(X), r);
  }
  const Matrix& S = X.samples();
  Vector var = S.array().square().rowwise().sum() / static_cast<double>(m);
  detail::check_positive_variances(var);
  Vector s = var.cwiseSqrt();
  Matrix Y = (s.cwiseInverse().asDiagonal() * S) / std::sqrt(static_cast<double>(m));
  Eigen::BDCSVD<Matrix> svd(Y, Eigen::ComputeThinU);
  Vector values = svd.singularValues().array().square();
  auto spec = detail::canonicalize_spectrum(values, svd.matrixU());
  return detail::assemble_pca_init(spec, s, r);
}

/// EM for Tyler's ML problem under the factor structure. Ingests raw data,
/// normalizes samples to the unit sphere (recording the original norms),
/// initializes by PCA of the normalized data's correlation matrix, and
/// alternates e_step / m_step until the relative objective change falls
/// below cfg.tol.
inline std::pair<FactorModel, FitReport> trex_fit(const DataMatrix& X,
                                                  const EstimatorConfig& cfg) {
  using clock = std::chrono::steady_clock;
  cfg.validate();
  if (X.count() < 2) throw ValidationError("trex_fit: need at least two samples");
  if (cfg.rank > X.dim()) {
    throw ValidationError("trex_fit: rank exceeds data dimension");
  }
  const auto t0 = clock::now();
  FitReport report;
  report.resolved_mode = detail::resolve_mode(cfg.mode, X.dim(), X.count());
  if (cfg.rank > std::min(X.dim(), X.count())) {
    report.warnings.push_back("rank exceeds min(n, m); the fit may be degenerate");
  }

  auto [Xn, norms] = X.normalized() ? std::make_pair(X, Vector(Vector::Ones(X.count())))
                                    : X.normalized_copy();
  report.original_norms = std::move(norms);

  const double n = static_cast<double>(Xn.dim());
  const double m = static_cast<double>(Xn.count());
  FactorModel model = pca_init(Xn, cfg.rank, report.resolved_mode);

  for (int k = 0;; ++k) {
    const auto te0 = clock::now();
    detail::WoodburyFactor wf(model);
    Vector maha = wf.maha(Xn.samples());
    for (Index i = 0; i < maha.size(); ++i) {
      if (!(maha[i] > 0.0)) {
        throw NumericalError("trex_fit: non-positive Mahalanobis distance at sample " +
                             std::to_string(i));
      }
    }
    const double f = wf.logdet_sigma + (n / m) * maha.array().log().sum();
    if (!std::isfinite(f)) {
      throw NumericalError("trex_fit: objective became non-finite at iteration " +
                           std::to_string(k));
    }
    report.objective_trace.push_back(f);
    if (k > 0 && terminate(report.objective_trace, cfg.tol)) {
      report.termination = Termination::ToleranceMet;
      break;
    }
    if (k == cfg.max_outer_iters) {
      report.termination = Termination::MaxIters;
      break;
    }
    Vector w = n * maha.cwiseInverse();
    WeightedScatter S_hat =
        report.resolved_mode == Mode::Tall
            ? WeightedScatter::from_weights(Xn, std::move(w))
            : [&] {
                const Matrix& D = Xn.samples();
                Matrix scatter = (D * w.asDiagonal() * D.transpose()) / m;
                scatter = 0.5 * (scatter + scatter.transpose()).eval();
                return WeightedScatter::from_dense(std::move(scatter));
              }();
    const auto tm0 = clock::now();
    report.e_step_seconds += std::chrono::duration<double>(tm0 - te0).count();
    model = m_step(S_hat, model, cfg);
    report.m_step_seconds += std::chrono::duration<double>(clock::now() - tm0).count();
  }
  report.outer_iters = static_cast<int>(report.objective_trace.size()) - 1;
  report.elapsed_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  return {std::move(model), std::move(report)};
}

/// Gaussian factor analysis: Rubin & Thayer EM on a fixed covariance matrix,
/// from the PCA initialization, until the Gaussian objective stabilizes.
inline std::pair<FactorModel, FitReport> gfa_fit(const Matrix& S, const EstimatorConfig& cfg) {
  using clock = std::chrono::steady_clock;
  cfg.validate();
  if (cfg.rank > S.rows()) throw ValidationError("gfa_fit: rank exceeds dimension");
  const auto t0 = clock::now();
  FactorModel init = pca_init_from_covariance(S, cfg.rank);
  auto inner = detail::rubin_thayer_em(WeightedScatter::from_dense(S), std::move(init),
                                       cfg.tol, cfg.max_outer_iters);
  FitReport report;
  report.objective_trace = std::move(inner.surrogate_trace);
  report.termination = inner.termination;
  report.outer_iters = static_cast<int>(report.objective_trace.size()) - 1;
  report.elapsed_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  report.m_step_seconds = report.elapsed_seconds;
  return {std::move(inner.model), std::move(report)};
}

/// Gaussian factor analysis from raw (unnormalized) data.
inline std::pair<FactorModel, FitReport> gfa_fit(const DataMatrix& X,
                                                 const EstimatorConfig& cfg) {
  return gfa_fit(sample_covariance(X), cfg);
}

/// One unnormalized Tyler fixed-point update
///   Sigma+ = (n/m) sum_i x_i x_i^T / (x_i' Sigma^{-1} x_i).
inline Matrix tyler_fp_step(const Matrix& Sigma, const DataMatrix& X) {
  const Index n = X.dim();
  const double m = static_cast<double>(X.count());
  Eigen::LLT<Matrix> llt(Sigma);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("tyler_fp_step: iterate is numerically singular");
  }
  const Matrix& D = X.samples();
  Matrix V = llt.solve(D);
  Vector maha = (D.array() * V.array()).colwise().sum();
  for (Index i = 0; i < maha.size(); ++i) {
    if (!(maha[i] > 0.0)) {
      throw NumericalError("tyler_fp_step: non-positive quadratic form at sample " +
                           std::to_string(i));
    }
  }
  Vector w = static_cast<double>(n) * maha.cwiseInverse();
  Matrix next = (D * w.asDiagonal() * D.transpose()) / m;
  return 0.5 * (next + next.transpose());
}

/// Classical unstructured Tyler estimator: fixed-point iteration from the
/// identity with trace normalization after every step. Stops when the
/// relative Frobenius change of the normalized iterate drops below cfg.tol.
/// The report's objective trace carries Tyler's negative log-likelihood,
/// which the iteration decreases monotonically.
inline std::pair<Matrix, FitReport> tyler_fixed_point(const DataMatrix& X,
                                                      const EstimatorConfig& cfg) {
  using clock = std::chrono::steady_clock;
  cfg.validate();
  const auto t0 = clock::now();
  const Index n = X.dim();
  const double m = static_cast<double>(X.count());
  FitReport report;
  report.resolved_mode = Mode::Dense;
  if (X.count() <= n) {
    report.warnings.push_back(
        "m <= n: Tyler's fixed point may not exist; iteration may diverge");
  }
  Matrix Sigma = Matrix::Identity(n, n);
  report.termination = Termination::MaxIters;
  for (int k = 0; k < cfg.max_outer_iters; ++k) {
    Eigen::LLT<Matrix> llt(Sigma);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("tyler_fixed_point: singular iterate at step " + std::to_string(k));
    }
    const Matrix& D = X.samples();
    Matrix V = llt.solve(D);
    Vector maha = (D.array() * V.array()).colwise().sum();
    double logdet_sigma = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
    report.objective_trace.push_back(logdet_sigma +
                                     (static_cast<double>(n) / m) * maha.array().log().sum());
    for (Index i = 0; i < maha.size(); ++i) {
      if (!(maha[i] > 0.0)) {
        throw NumericalError("tyler_fixed_point: non-positive quadratic form");
      }
    }
    Vector w = static_cast<double>(n) * maha.cwiseInverse();
    Matrix next = (D * w.asDiagonal() * D.transpose()) / m;
    next = 0.5 * (next + next.transpose()).eval();
    next *= static_cast<double>(n) / next.trace();
    const double change = (next - Sigma).norm() / Sigma.norm();
    Sigma = std::move(next);
    report.outer_iters = k + 1;
    if (change <= cfg.tol) {
      report.termination = Termination::ToleranceMet;
      break;
    }
  }
  {
    // objective of the final iterate
    Eigen::LLT<Matrix> llt(Sigma);
    if (llt.info() == Eigen::Success) {
      const Matrix& D = X.samples();
      Matrix V = llt.solve(D);
      Vector maha = (D.array() * V.array()).colwise().sum();
      double logdet_sigma = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
      report.objective_trace.push_back(logdet_sigma +
                                       (static_cast<double>(n) / m) * maha.array().log().sum());
    }
  }
  report.elapsed_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  return {std::move(Sigma), std::move(report)};
}

}  // namespace trex
