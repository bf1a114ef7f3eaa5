#pragma once

// Variance estimates, pointwise intervals, simultaneous bands and score
// diagnostics for a fitted working model.

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "core/solver.hpp"

namespace halk {

enum class VarianceMethod { orthonormal, delta };
enum class BandKind { pointwise, log_scaled, mvn_quantile };

std::string to_string(VarianceMethod m);
std::string to_string(BandKind b);
VarianceMethod parse_variance_method(const std::string& tag);
BandKind parse_band_kind(const std::string& tag);

/// Orthonormal basis phi* = A phi_S of the support columns in
/// L2((1/n) sum_i weights_i delta_{X_i}).
struct OrthoBasis {
  std::vector<std::size_t> support;  // design columns, ascending
  Eigen::MatrixXd A;                 // d_eff x |support|
  std::size_t d_eff = 0;
  std::vector<std::size_t> dropped;  // design columns dropped as dependent
  Eigen::VectorXd weights;
};

OrthoBasis orthonormalize(const DesignMatrix& design, const std::vector<std::size_t>& support,
                          const Eigen::VectorXd& weights);

/// Max |A G_w A^T - I| over retained columns.
double gram_identity_error(const OrthoBasis& ortho, const DesignMatrix& design);

/// Training data and coefficients that inference is computed from.
struct InferenceContext {
  const DesignMatrix* design = nullptr;  // training rows, full dictionary
  Eigen::VectorXd y;
  Eigen::VectorXd w;
  FamilyKind family = FamilyKind::gaussian;
  Eigen::VectorXd beta;
  std::vector<bool> penalized;  // empty: every column penalised

  Eigen::Index n() const { return y.size(); }
  std::vector<std::size_t> support() const;
  Eigen::VectorXd fitted_mean() const;
};

/// Weights of the orthonormalising inner product: w / sigma^2 (gaussian,
/// sigma^2 = mean of w e^2), w (weighted gaussian, known inverse variances),
/// w m (1 - m) (binomial).
Eigen::VectorXd inference_weights(const InferenceContext& ctx);

/// (1/n) sum_j phi*_j(x)^2 per grid row. phi_grid holds the support columns
/// (ortho.support order) evaluated at the grid.
Eigen::VectorXd orthonormal_variance(const OrthoBasis& ortho, const Eigen::MatrixXd& phi_grid);

struct DeltaInfluence {
  Eigen::MatrixXd D;  // n x m influence values phi(x)^T I^{-1} S_i
  Eigen::VectorXd variance;  // (1/n^2) sum_i D_im^2
  bool pinv_fallback = false;
};

DeltaInfluence delta_influence(const InferenceContext& ctx, const std::vector<std::size_t>& support,
                               const Eigen::MatrixXd& phi_grid);

/// Standard normal quantile for a two-sided interval at the given level.
double normal_two_sided_quantile(double level);

/// level-quantile of max_m |Z_m|, Z ~ N(0, rho + 1e-8 I), from `samples`
/// draws generated in seeded blocks.
double mvn_max_quantile(const Eigen::MatrixXd& rho, double level, std::size_t samples,
                        std::uint64_t seed);

/// Empirical correlation of the columns of D.
Eigen::MatrixXd influence_correlation(const Eigen::MatrixXd& D);

struct InferenceRequest {
  double level = 0.95;
  VarianceMethod method = VarianceMethod::orthonormal;
  BandKind band = BandKind::pointwise;
  bool probability_scale = false;  // binomial only
  std::uint64_t seed = 20240601;
  std::size_t mc_samples = 100000;
};

struct InferenceResult {
  Eigen::MatrixXd grid;  // as supplied by the caller
  Eigen::VectorXd estimate, se, lower, upper;
  double level = 0.95;
  VarianceMethod method = VarianceMethod::orthonormal;
  BandKind band = BandKind::pointwise;
  bool probability_scale = false;
  std::size_t d_eff = 0;
  double multiplier = 0.0;  // half-width / se
  std::vector<std::string> warnings;
};

/// estimate +/- z * se.
InferenceResult pointwise_ci(const Eigen::VectorXd& estimate, const Eigen::VectorXd& se,
                             double level);

/// Full pipeline for one grid: variance, pointwise interval and the requested
/// band. phi_grid: support columns at the grid, in ctx.support() order.
InferenceResult confidence_intervals(const InferenceContext& ctx, const Eigen::MatrixXd& phi_grid,
                                     const InferenceRequest& req);

struct ScoreReport {
  double max_score = 0.0;          // max_j |P_n S_j| over the probe columns
  Eigen::VectorXd r_tilde;         // sum_t r*_t phi*_t(x) on the grid
  double threshold = 0.0;          // (n / d_eff)^{-1/2}
  double norm_preserving_score = 0.0;  // max over support pairs (j0, j*)
  std::size_t d_eff = 0;
};

/// probe: design columns to score (defaults to the support when empty).
ScoreReport score_diagnostics(const InferenceContext& ctx, const std::vector<std::size_t>& probe,
                              const Eigen::MatrixXd& phi_grid);

}  // namespace halk
