#pragma once

// Monte Carlo harness: data-generating processes, estimation-rate experiments
// and confidence-interval coverage experiments.

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core/estimate.hpp"
#include "json.hpp"

namespace halk {

enum class TruthKind { smooth_sin, poly, spline_sparse };
enum class NoiseKind { gaussian, bernoulli };
enum class CovariateLaw { uniform, discrete_uniform };

struct SparseTerm {
  BasisIndex index;
  double coef = 0.0;
};

struct DGPSpec {
  int d = 1;
  TruthKind truth = TruthKind::smooth_sin;
  std::vector<SparseTerm> terms;  // spline_sparse only
  bool add_truth_terms = true;    // merge the truth's basis indices into fitted dictionaries
  NoiseKind noise = NoiseKind::gaussian;
  double sigma = 0.5;
  CovariateLaw law = CovariateLaw::uniform;
  int mass_points = 20;  // discrete_uniform: {1/m, 2/m, ..., 1}
  std::uint64_t seed = 1;

  void validate() const;
  /// Q0(x) on the linear-predictor scale.
  double truth_value(std::span<const double> x) const;
  Eigen::VectorXd truth_values(const Eigen::MatrixXd& X) const;
};

struct Dataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::VectorXd truth;  // Q0(X_i)
};

/// Replicate `rep` of a size-n sample; deterministic in (seed, n, rep).
Dataset generate(const DGPSpec& spec, std::size_t n, std::uint64_t rep = 0);
/// Same covariates for every replicate, fresh noise.
Dataset generate_fixed_design(const DGPSpec& spec, std::size_t n, std::uint64_t rep);

/// ceil(n^{1/(2k*+1)} log n) with k* = k + 1.
std::size_t knot_budget(std::size_t n, int k);

/// 101 points (d = 1), 21 x 21 (d = 2), 11 per axis otherwise; with
/// interior set, the 0.05 margin of each axis is excluded.
Eigen::MatrixXd evaluation_grid(int d, bool interior = false);

/// How each replicate is fitted.
struct EstimatorConfig {
  int k = 1;
  FitKind estimator = FitKind::hal;
  SelectorKind selector = SelectorKind::cv;
  int folds = 5;
  std::optional<std::size_t> j_max;  // empty: knot_budget(n, k)
  SubmodelRestriction restriction;
  double lepski_constant = 1.96;
  VarianceMethod lepski_variance = VarianceMethod::orthonormal;

  FitOptions options(const DGPSpec& spec, std::size_t n, std::uint64_t seed) const;
};

struct RateRow {
  std::size_t n = 0;
  int rep = 0;
  std::uint64_t seed = 0;
  double rmse = 0.0;  // NaN when the fit failed
  std::string error;
};

struct RateSummary {
  std::vector<std::size_t> n;
  std::vector<double> median_rmse;
  std::vector<int> failures;
  double slope = 0.0;
  double slope_se = 0.0;
};

struct RateReport {
  nlohmann::json config;
  std::vector<RateRow> rows;
  RateSummary summary;
};

/// Median over replicates of the grid RMSE per n, and the least-squares slope
/// of log median RMSE against log n.
RateSummary summarize_rate(const std::vector<RateRow>& rows);

RateReport rate_experiment(const DGPSpec& spec, const EstimatorConfig& est,
                           const std::vector<std::size_t>& n_list, int reps, bool interior = false);

struct CoverageRow {
  int rep = 0;
  std::uint64_t seed = 0;
  std::string error;  // nonempty: replicate failed
  Eigen::VectorXd estimate, se, truth;  // per probe
  std::vector<std::vector<bool>> covered;  // [level][probe]
};

struct CoverageSummary {
  std::vector<double> levels;
  std::vector<std::vector<double>> coverage;  // [level][probe]
  std::vector<std::vector<double>> mc_error;
  std::vector<double> average;                // per level
  int replicates = 0;                         // successful replicates
  int failures = 0;
};

struct CoverageReport {
  nlohmann::json config;
  Eigen::MatrixXd probes;
  std::vector<CoverageRow> rows;
  CoverageSummary summary;
  std::vector<std::string> warnings;
};

CoverageSummary summarize_coverage(const std::vector<CoverageRow>& rows,
                                   const std::vector<double>& levels, std::size_t probes);

struct CoverageConfig {
  std::size_t n = 1000;
  int reps = 200;
  std::vector<double> levels{0.95};
  Eigen::MatrixXd probes;  // m x d
  VarianceMethod method = VarianceMethod::orthonormal;
  bool fixed_design = false;
};

/// Standard errors are computed once per replicate; each level reuses them
/// with its own normal quantile.
CoverageReport coverage_experiment(const DGPSpec& spec, const EstimatorConfig& est,
                                   const CoverageConfig& cfg);

nlohmann::json to_json(const DGPSpec& spec);
DGPSpec dgp_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EstimatorConfig& est);
EstimatorConfig estimator_from_json(const nlohmann::json& j);

}  // namespace halk
