// Command-line front end: CSV ingestion, estimator invocation, Monte-Carlo
// benchmarks, and subspace recovery. Exit codes: 0 success, 2 usage/parse
// error, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "trex/trex.hpp"

namespace fs = std::filesystem;
using namespace trex;

namespace {

struct CommonOptions {
  Index rank = 1;
  double tol = 1e-6;
  int max_iters = 100;
  std::string mode = "auto";
  std::uint64_t seed = 0;
  int threads = 1;
};

void add_common(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--rank", opt.rank, "number of factors r")->capture_default_str();
  cmd->add_option("--tol", opt.tol, "relative objective-change tolerance")
      ->capture_default_str();
  cmd->add_option("--max-iters", opt.max_iters, "outer iteration cap")->capture_default_str();
  cmd->add_option("--mode", opt.mode, "dense | tall | auto (tall when n > 4m)")
      ->check(CLI::IsMember({"dense", "tall", "auto"}))
      ->capture_default_str();
  cmd->add_option("--seed", opt.seed, "RNG seed")->capture_default_str();
  cmd->add_option("--threads", opt.threads, "worker threads (1 = deterministic sequential)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

EstimatorConfig make_config(const CommonOptions& opt) {
  EstimatorConfig cfg;
  cfg.rank = opt.rank;
  cfg.tol = opt.tol;
  cfg.max_outer_iters = opt.max_iters;
  cfg.mode = opt.mode == "dense" ? Mode::Dense : opt.mode == "tall" ? Mode::Tall : Mode::Auto;
  cfg.seed = opt.seed;
  return cfg;
}

Estimator parse_estimator(const std::string& name) {
  static const std::map<std::string, Estimator> table = {
      {"trex", Estimator::Trex},
      {"gfa", Estimator::Gfa},
      {"tyler", Estimator::Tyler},
      {"pca", Estimator::PcaInit},
  };
  auto it = table.find(name);
  if (it == table.end()) throw ValidationError("unknown estimator '" + name + "'");
  return it->second;
}

void print_warnings(const FitReport& report) {
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
}

int run_fit(const std::string& input, const std::string& output, const std::string& estimator,
            const CommonOptions& opt) {
  DataMatrix X = DataMatrix::from_rows(read_matrix_csv(input));
  EstimatorConfig cfg = make_config(opt);
  ModelFile mf;
  mf.estimator = estimator;
  Mode resolved = detail::resolve_mode(cfg.mode, X.dim(), X.count());
  double objective = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
  int iters = 0;

  if (estimator == "trex") {
    auto [model, report] = trex_fit(X, cfg);
    print_warnings(report);
    mf.kind = "factor";
    mf.factor = std::move(model);
    mf.termination = to_string(report.termination);
    mf.outer_iters = report.outer_iters;
    mf.objective_trace = report.objective_trace;
    resolved = report.resolved_mode;
    objective = report.objective_trace.back();
    seconds = report.elapsed_seconds;
    iters = report.outer_iters;
  } else if (estimator == "gfa") {
    auto [model, report] = gfa_fit(X, cfg);
    print_warnings(report);
    mf.kind = "factor";
    mf.factor = std::move(model);
    mf.termination = to_string(report.termination);
    mf.outer_iters = report.outer_iters;
    mf.objective_trace = report.objective_trace;
    resolved = Mode::Dense;
    objective = report.objective_trace.back();
    seconds = report.elapsed_seconds;
    iters = report.outer_iters;
  } else if (estimator == "tyler") {
    auto [Sigma, report] = tyler_fixed_point(X, cfg);
    print_warnings(report);
    mf.kind = "scatter";
    mf.scatter = std::move(Sigma);
    mf.termination = to_string(report.termination);
    mf.outer_iters = report.outer_iters;
    mf.objective_trace = report.objective_trace;
    resolved = Mode::Dense;
    objective = report.objective_trace.back();
    seconds = report.elapsed_seconds;
    iters = report.outer_iters;
  } else {
    mf.kind = "factor";
    mf.factor = pca_init(X, cfg.rank, cfg.mode);
    mf.termination = "none";
    mf.outer_iters = 0;
  }

  write_model_file(output, mf);
  std::printf(
      "fit ok: estimator=%s n=%lld m=%lld rank=%lld mode=%s iters=%d objective=%s seconds=%.3f\n",
      estimator.c_str(), static_cast<long long>(X.dim()), static_cast<long long>(X.count()),
      static_cast<long long>(opt.rank), to_string(resolved), iters,
      std::isnan(objective) ? "n/a" : detail::format_double(objective).c_str(), seconds);
  return 0;
}

struct BenchOptions {
  std::string scenario = "gaussian";
  std::vector<Index> n_values = {50};
  std::vector<Index> m_values = {300};
  double nu = 3.0;
  double outlier_fraction = 0.02;
  int reps = 20;
  std::vector<std::string> estimator_names = {"trex", "gfa"};
};

int run_bench(const BenchOptions& bopt, const std::string& output, const CommonOptions& opt) {
  if (bopt.reps < 1) throw ValidationError("--reps must be >= 1");
  EstimatorConfig cfg = make_config(opt);

  struct Row {
    std::string scenario;
    EstimatorStats stats;
  };
  std::vector<Row> rows;

  auto run_one = [&](const Scenario& scn, const std::vector<Estimator>& which,
                     const EstimatorConfig& cfg_used, const std::string& label) {
    BenchResult res = run_benchmark(scn, which, cfg_used, opt.threads);
    for (const auto& st : res.stats) {
      rows.push_back({label.empty() ? res.scenario_label : label, st});
    }
  };

  if (bopt.scenario == "tyler-compare") {
    // protocol: m = n + 1, both estimators run a fixed number of iterations
    EstimatorConfig fixed = cfg;
    fixed.max_outer_iters = std::min(cfg.max_outer_iters, 20);
    fixed.tol = 1e-300;
    for (Index n : bopt.n_values) {
      Scenario scn;
      scn.kind = ScenarioKind::Gaussian;
      scn.Sigma_true = planted_model(n, opt.rank, opt.seed).covariance();
      scn.m = n + 1;
      scn.r = opt.rank;
      scn.replicates = bopt.reps;
      scn.seed = opt.seed;
      run_one(scn, {Estimator::Trex, Estimator::Tyler}, fixed,
              "tyler-compare;n=" + std::to_string(n) + ";m=" + std::to_string(n + 1));
    }
  } else {
    static const std::map<std::string, ScenarioKind> kinds = {
        {"gaussian", ScenarioKind::Gaussian},
        {"student-t", ScenarioKind::StudentT},
        {"contaminated", ScenarioKind::Contaminated},
    };
    auto it = kinds.find(bopt.scenario);
    if (it == kinds.end()) throw ValidationError("unknown scenario '" + bopt.scenario + "'");
    const Index n = bopt.n_values.front();
    std::vector<Estimator> which;
    for (const auto& name : bopt.estimator_names) which.push_back(parse_estimator(name));
    for (Index m : bopt.m_values) {
      Scenario scn;
      scn.kind = it->second;
      scn.Sigma_true = planted_model(n, opt.rank, opt.seed).covariance();
      scn.nu = bopt.nu;
      scn.outlier_fraction = bopt.outlier_fraction;
      scn.m = m;
      scn.r = opt.rank;
      scn.replicates = bopt.reps;
      scn.seed = opt.seed;
      run_one(scn, which, cfg, "");
    }
  }

  if (!output.empty()) {
    std::ofstream out(output);
    if (!out) throw ParseError("cannot write '" + output + "'", 0, 0);
    out << "scenario,estimator,mean_mse,std_mse,mean_seconds,failures\n";
    for (const auto& row : rows) {
      out << row.scenario << ',' << to_string(row.stats.estimator) << ','
          << detail::format_double(row.stats.mean_mse) << ','
          << detail::format_double(row.stats.std_mse) << ','
          << detail::format_double(row.stats.mean_seconds) << ',' << row.stats.failures << '\n';
    }
  }

  std::printf("%-36s %-8s %12s %12s %12s %9s\n", "scenario", "estimator", "mean_mse", "std_mse",
              "mean_sec", "failures");
  for (const auto& row : rows) {
    std::printf("%-36s %-8s %12.6f %12.6f %12.6f %9d\n", row.scenario.c_str(),
                to_string(row.stats.estimator), row.stats.mean_mse, row.stats.std_mse,
                row.stats.mean_seconds, row.stats.failures);
  }
  return 0;
}

struct SubspaceOptions {
  std::string test_input;
  std::vector<std::string> methods = {"trex", "pca", "spca"};
};

int run_subspace(const std::string& input, const SubspaceOptions& sopt,
                 const std::string& output, const CommonOptions& opt) {
  DataMatrix train = DataMatrix::from_rows(read_matrix_csv(input));
  const Index n = train.dim();
  const Index m = train.count();
  if (opt.rank > std::min(n, m)) {
    throw ValidationError("rank " + std::to_string(opt.rank) + " exceeds min(n, m) = " +
                          std::to_string(std::min(n, m)));
  }
  EstimatorConfig cfg = make_config(opt);

  MedianResult med = euclidean_median(train);
  if (!med.converged) {
    std::cerr << "warning: Euclidean median stalled after " << med.iters << " iterations\n";
  }
  DataMatrix centered(train.samples().colwise() - med.center);
  Vector mean = train.samples().rowwise().mean();

  fs::create_directories(output);

  struct Fitted {
    std::string name;
    Subspace subspace;
    Vector center;
  };
  std::vector<Fitted> fits;
  for (const auto& method : sopt.methods) {
    if (method == "trex") {
      fits.push_back({method, trex_subspace(centered, opt.rank, cfg), med.center});
    } else if (method == "spca") {
      fits.push_back({method, spherical_pca(centered, opt.rank), med.center});
    } else if (method == "pca") {
      fits.push_back({method, pca_subspace(train, opt.rank, cfg.mode), mean});
    } else {
      throw ValidationError("unknown subspace method '" + method + "'");
    }
    write_matrix_csv((fs::path(output) / ("basis_" + method + ".csv")).string(),
                     fits.back().subspace.basis());
  }

  const bool out_of_sample = !sopt.test_input.empty();
  DataMatrix eval =
      out_of_sample ? DataMatrix::from_rows(read_matrix_csv(sopt.test_input)) : train;
  if (eval.dim() != n) throw ValidationError("test data dimension does not match training data");

  std::ofstream table((fs::path(output) / "distances.csv").string());
  if (!table) throw ParseError("cannot write distances.csv", 0, 0);
  table << "index";
  for (const auto& fit : fits) table << ',' << fit.name;
  table << '\n';
  std::vector<Vector> columns;
  for (const auto& fit : fits) {
    columns.push_back(point_to_subspace_distances(eval, fit.subspace, fit.center));
  }
  for (Index i = 0; i < eval.count(); ++i) {
    table << i;
    for (const auto& col : columns) table << ',' << detail::format_double(col[i]);
    table << '\n';
  }

  std::printf("subspace ok: n=%lld m=%lld rank=%lld %s distances for %lld samples\n",
              static_cast<long long>(n), static_cast<long long>(m),
              static_cast<long long>(opt.rank), out_of_sample ? "out-of-sample" : "in-sample",
              static_cast<long long>(eval.count()));
  for (std::size_t f = 0; f < fits.size(); ++f) {
    Vector sorted = columns[f];
    std::sort(sorted.data(), sorted.data() + sorted.size());
    std::printf("  %-5s median distance %.6g\n", fits[f].name.c_str(), sorted[sorted.size() / 2]);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust factor-model covariance estimation (Tyler ML via EM)"};
  app.require_subcommand(1);

  CommonOptions fit_opt, bench_common, sub_common;
  fit_opt.rank = 1;
  bench_common.rank = 5;
  sub_common.rank = 9;

  std::string fit_input, fit_output = "model.txt", fit_estimator = "trex";
  auto* fit = app.add_subcommand("fit", "fit one estimator to a CSV matrix (one sample per row)");
  fit->add_option("--input", fit_input, "input CSV, one sample per row")->required();
  fit->add_option("--output", fit_output, "model file to write")->capture_default_str();
  fit->add_option("--estimator", fit_estimator, "trex | gfa | tyler | pca")
      ->check(CLI::IsMember({"trex", "gfa", "tyler", "pca"}))
      ->capture_default_str();
  add_common(fit, fit_opt);

  BenchOptions bopt;
  std::string bench_output;
  auto* bench = app.add_subcommand("bench", "Monte-Carlo benchmark on synthetic scenarios");
  bench->add_option("--scenario", bopt.scenario,
                    "gaussian | student-t | contaminated | tyler-compare")
      ->check(CLI::IsMember({"gaussian", "student-t", "contaminated", "tyler-compare"}))
      ->capture_default_str();
  bench->add_option("--n", bopt.n_values, "dimension n (tyler-compare: list forms the grid)")
      ->delimiter(',')
      ->capture_default_str();
  bench->add_option("--m", bopt.m_values, "sample counts m (list forms the grid)")
      ->delimiter(',')
      ->capture_default_str();
  bench->add_option("--nu", bopt.nu, "student-t degrees of freedom")->capture_default_str();
  bench->add_option("--outlier-fraction", bopt.outlier_fraction, "contaminated outlier share")
      ->capture_default_str();
  bench->add_option("--reps", bopt.reps, "Monte-Carlo replicates")->capture_default_str();
  bench->add_option("--estimators", bopt.estimator_names, "estimators to compare")
      ->delimiter(',')
      ->capture_default_str();
  bench->add_option("--output", bench_output, "benchmark CSV to write");
  add_common(bench, bench_common);

  SubspaceOptions sopt;
  std::string sub_input, sub_output = "subspace_out";
  auto* sub = app.add_subcommand("subspace", "robust subspace recovery with distance tables");
  sub->add_option("--input", sub_input, "training CSV, one sample per row")->required();
  sub->add_option("--test-input", sopt.test_input, "held-out CSV for out-of-sample distances");
  sub->add_option("--output", sub_output, "output directory")->capture_default_str();
  sub->add_option("--methods", sopt.methods, "subset of trex,pca,spca")
      ->delimiter(',')
      ->capture_default_str();
  add_common(sub, sub_common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (fit->parsed()) return run_fit(fit_input, fit_output, fit_estimator, fit_opt);
    if (bench->parsed()) return run_bench(bopt, bench_output, bench_common);
    if (sub->parsed()) return run_subspace(sub_input, sopt, sub_output, sub_common);
  } catch (const ParseError& e) {
    std::cerr << "parse error";
    if (e.line > 0) std::cerr << " (line " << e.line << ", column " << e.column << ")";
    std::cerr << ": " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
