#pragma once

// Seeded generators for the benchmark scenarios (Gaussian, multivariate-t,
// contaminated Gaussian), planted ground-truth factor models, the
// correlation-matrix MSE metric, and the Monte-Carlo harness.
//
// Every draw flows from the scenario seed. Replicates get independent
// streams derived by counter, so parallel and sequential schedules produce
// identical per-replicate results.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "trex/errors.hpp"
#include "trex/estimators.hpp"
#include "trex/factor_model.hpp"

namespace trex {

/// SplitMix64 step; decorrelates nearby seeds when deriving per-replicate
/// streams from (seed, counter).
inline std::uint64_t derive_stream_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + (index + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

enum class ScenarioKind { Gaussian, StudentT, Contaminated };

inline const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::Gaussian: return "gaussian";
    case ScenarioKind::StudentT: return "student-t";
    case ScenarioKind::Contaminated: return "contaminated";
  }
  return "unknown";
}

struct Scenario {
  ScenarioKind kind = ScenarioKind::Gaussian;
  Matrix Sigma_true;              // SPD ground truth
  double nu = 3.0;                // student-t degrees of freedom
  double outlier_fraction = 0.02; // contaminated only
  Index m = 100;
  Index r = 1;                    // rank used to construct the truth
  int replicates = 20;
  std::uint64_t seed = 0;

  Index dim() const { return Sigma_true.rows(); }

  void validate() const {
    if (Sigma_true.rows() < 1 || Sigma_true.rows() != Sigma_true.cols()) {
      throw ValidationError("scenario: Sigma_true must be square and nonempty");
    }
    if (m < 1) throw ValidationError("scenario: m must be >= 1");
    if (replicates < 1) throw ValidationError("scenario: replicate count must be >= 1");
    if (kind == ScenarioKind::StudentT && !(nu > 2.0)) {
      throw ValidationError("scenario: student-t needs nu > 2 for a finite covariance");
    }
    if (kind == ScenarioKind::Contaminated) {
      if (!(outlier_fraction >= 0.0) || !(outlier_fraction < 1.0)) {
        throw ValidationError("scenario: outlier fraction must lie in [0, 1)");
      }
      if (outlier_fraction * static_cast<double>(m) < 1.0) {
        throw ValidationError("scenario: contaminated data needs at least one outlier");
      }
    }
  }
};

/// Random ground truth: F entries i.i.d. N(0, 1/r), d i.i.d. U[0.5, 1.5].
inline FactorModel planted_model(Index n, Index r, std::uint64_t seed) {
  if (r < 1 || r > n) throw ValidationError("planted_model: need 1 <= r <= n");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.5, 1.5);
  Matrix F(n, r);
  const double scale = 1.0 / std::sqrt(static_cast<double>(r));
  for (Index j = 0; j < r; ++j) {
    for (Index i = 0; i < n; ++i) F(i, j) = scale * gauss(rng);
  }
  Vector d(n);
  for (Index i = 0; i < n; ++i) d[i] = unif(rng);
  return FactorModel(std::move(F), std::move(d));
}

namespace detail {

/// Symmetric square root Sigma^{1/2} = Q Lambda^{1/2} Q'.
inline Matrix symmetric_sqrt(const Matrix& Sigma) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(Sigma);
  if (eig.info() != Eigen::Success) {
    throw NumericalError("symmetric_sqrt: eigendecomposition failed");
  }
  if (eig.eigenvalues().minCoeff() <= 0.0) {
    throw ValidationError("symmetric_sqrt: matrix is not positive definite");
  }
  return eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().asDiagonal() *
         eig.eigenvectors().transpose();
}

inline Matrix draw_gaussian_block(Index n, Index m, const Matrix& sqrt_Sigma,
                                  std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix G(n, m);
  for (Index j = 0; j < m; ++j) {
    for (Index i = 0; i < n; ++i) G(i, j) = gauss(rng);
  }
  return sqrt_Sigma * G;
}

inline DataMatrix draw_scenario(const Scenario& scn, const Matrix& sqrt_Sigma,
                                std::uint64_t seed) {
  const Index n = scn.dim();
  const Index m = scn.m;
  std::mt19937_64 rng(seed);
  switch (scn.kind) {
    case ScenarioKind::Gaussian:
      return DataMatrix(draw_gaussian_block(n, m, sqrt_Sigma, rng));
    case ScenarioKind::StudentT: {
      // scatter scaled by (nu-2)/nu so the covariance equals Sigma_true
      Matrix X = std::sqrt((scn.nu - 2.0) / scn.nu) * draw_gaussian_block(n, m, sqrt_Sigma, rng);
      std::chi_squared_distribution<double> chi2(scn.nu);
      for (Index j = 0; j < m; ++j) {
        X.col(j) /= std::sqrt(chi2(rng) / scn.nu);
      }
      return DataMatrix(std::move(X));
    }
    case ScenarioKind::Contaminated: {
      const Index k = static_cast<Index>(
          std::ceil(scn.outlier_fraction * static_cast<double>(m)));
      const double magnitude =
          (3.0 / std::sqrt(static_cast<double>(n))) * std::sqrt(scn.Sigma_true.trace());
      // gaussian block first: the clean samples coincide with the
      // uncontaminated scenario under the same seed
      Matrix X = draw_gaussian_block(n, m, sqrt_Sigma, rng);
      std::bernoulli_distribution coin(0.5);
      Vector mu(n);
      for (Index i = 0; i < n; ++i) mu[i] = coin(rng) ? magnitude : -magnitude;
      X.rightCols(k).colwise() += mu;  // the last k samples are the outliers
      return DataMatrix(std::move(X));
    }
  }
  throw ValidationError("draw_scenario: unknown kind");
}

}  // namespace detail

/// One dataset drawn from the scenario, deterministic in scn.seed.
inline DataMatrix sample(const Scenario& scn) {
  scn.validate();
  return detail::draw_scenario(scn, detail::symmetric_sqrt(scn.Sigma_true), scn.seed);
}

/// Relative Frobenius error between the correlation matrices of the two
/// inputs; scale-free by construction.
inline double correlation_mse(const Matrix& Sigma_hat, const Matrix& Sigma_true) {
  if (Sigma_hat.rows() != Sigma_true.rows() || Sigma_hat.cols() != Sigma_true.cols() ||
      Sigma_hat.rows() != Sigma_hat.cols()) {
    throw ValidationError("correlation_mse: matrices must be square and same size");
  }
  auto to_correlation = [](const Matrix& S) {
    for (Index i = 0; i < S.rows(); ++i) {
      if (!(S(i, i) > 0.0)) {
        throw ValidationError("correlation_mse: non-positive diagonal entry at " +
                              std::to_string(i));
      }
    }
    Vector sinv = S.diagonal().cwiseSqrt().cwiseInverse();
    return Matrix(sinv.asDiagonal() * S * sinv.asDiagonal());
  };
  Matrix Ch = to_correlation(Sigma_hat);
  Matrix Ct = to_correlation(Sigma_true);
  return (Ch - Ct).norm() / Ct.norm();
}

enum class Estimator { Trex, Gfa, Tyler, PcaInit };

inline const char* to_string(Estimator e) {
  switch (e) {
    case Estimator::Trex: return "trex";
    case Estimator::Gfa: return "gfa";
    case Estimator::Tyler: return "tyler";
    case Estimator::PcaInit: return "pca";
  }
  return "unknown";
}

struct EstimatorStats {
  Estimator estimator = Estimator::Trex;
  double mean_mse = 0.0;
  double std_mse = 0.0;
  int replicates = 0;  // successful replicates entering the statistics
  double mean_seconds = 0.0;
  int failures = 0;
};

struct BenchResult {
  std::string scenario_label;
  int replicates = 0;
  std::vector<EstimatorStats> stats;
};

namespace detail {

inline Matrix fit_one(Estimator which, const DataMatrix& X, const EstimatorConfig& cfg) {
  switch (which) {
    case Estimator::Trex: return trex_fit(X, cfg).first.covariance();
    case Estimator::Gfa: return gfa_fit(X, cfg).first.covariance();
    case Estimator::Tyler: return tyler_fixed_point(X, cfg).first;
    case Estimator::PcaInit: return pca_init(X, cfg.rank, cfg.mode).covariance();
  }
  throw ValidationError("fit_one: unknown estimator");
}

}  // namespace detail

/// Monte-Carlo harness: per replicate, draw one dataset and fit every
/// estimator on it, recording the correlation MSE against the scenario truth
/// and the wall clock. Replicates run on independent derived RNG streams, so
/// the statistics are identical for any thread count; failures are counted
/// per estimator instead of aborting the run.
inline BenchResult run_benchmark(const Scenario& scn, const std::vector<Estimator>& estimators,
                                 const EstimatorConfig& cfg, int threads = 1) {
  scn.validate();
  cfg.validate();
  if (estimators.empty()) throw ValidationError("run_benchmark: no estimators requested");
  const int reps = scn.replicates;
  const std::size_t ne = estimators.size();
  const Matrix sqrt_Sigma = detail::symmetric_sqrt(scn.Sigma_true);

  struct Cell {
    double mse = 0.0;
    double seconds = 0.0;
    bool failed = false;
  };
  std::vector<Cell> cells(static_cast<std::size_t>(reps) * ne);

  auto run_replicate = [&](int rep) {
    DataMatrix X = detail::draw_scenario(scn, sqrt_Sigma,
                                         derive_stream_seed(scn.seed, static_cast<std::uint64_t>(rep)));
    for (std::size_t e = 0; e < ne; ++e) {
      Cell& cell = cells[static_cast<std::size_t>(rep) * ne + e];
      const auto t0 = std::chrono::steady_clock::now();
      try {
        Matrix Sigma_hat = detail::fit_one(estimators[e], X, cfg);
        cell.mse = correlation_mse(Sigma_hat, scn.Sigma_true);
      } catch (const NumericalError&) {
        cell.failed = true;
      }
      cell.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
  };

  if (threads <= 1) {
    for (int rep = 0; rep < reps; ++rep) run_replicate(rep);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    const int nthreads = std::min(threads, reps);
    pool.reserve(static_cast<std::size_t>(nthreads));
    for (int t = 0; t < nthreads; ++t) {
      pool.emplace_back([&] {
        for (int rep = next.fetch_add(1); rep < reps; rep = next.fetch_add(1)) {
          run_replicate(rep);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  BenchResult result;
  result.scenario_label = std::string(to_string(scn.kind)) + ";n=" + std::to_string(scn.dim()) +
                          ";r=" + std::to_string(scn.r) + ";m=" + std::to_string(scn.m);
  result.replicates = reps;
  for (std::size_t e = 0; e < ne; ++e) {
    EstimatorStats stats;
    stats.estimator = estimators[e];
    double sum = 0.0, sumsq = 0.0, secs = 0.0;
    for (int rep = 0; rep < reps; ++rep) {
      const Cell& cell = cells[static_cast<std::size_t>(rep) * ne + e];
      if (cell.failed) {
        ++stats.failures;
        continue;
      }
      sum += cell.mse;
      sumsq += cell.mse * cell.mse;
      secs += cell.seconds;
      ++stats.replicates;
    }
    if (stats.replicates > 0) {
      stats.mean_mse = sum / stats.replicates;
      stats.mean_seconds = secs / stats.replicates;
      if (stats.replicates > 1) {
        const double var =
            (sumsq - sum * sum / stats.replicates) / (stats.replicates - 1);
        stats.std_mse = std::sqrt(std::max(var, 0.0));
      }
    }
    result.stats.push_back(stats);
  }
  return result;
}

}  // namespace trex
