#pragma once

// L1-penalised and unpenalised empirical risk minimisation over a design
// matrix: coordinate-descent paths, norm-constrained fits and relaxed refits.

#include <Eigen/Dense>
#include <cstddef>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "core/design.hpp"
#include "json.hpp"

namespace halk {

enum class FamilyKind { gaussian, weighted_gaussian, binomial };

std::string to_string(FamilyKind f);
FamilyKind parse_family(const std::string& tag);

enum class FitKind { hal, relax, sieve };

std::string to_string(FitKind k);
FitKind parse_fit_kind(const std::string& tag);

/// Response, weights and penalty pattern for one fitting problem. The design
/// is borrowed and must outlive the problem.
struct Problem {
  const DesignMatrix* design = nullptr;
  Eigen::VectorXd y;
  Eigen::VectorXd w;  // observation weights, all ones unless weighted
  FamilyKind family = FamilyKind::gaussian;
  std::vector<bool> penalized;

  Eigen::Index n() const { return y.size(); }
  Eigen::Index p() const { return design->cols(); }
  /// Throws InputError on inconsistent sizes, non-positive weights or
  /// non-binary binomial responses.
  void validate() const;
};

/// Penalty pattern for a dictionary: everything penalised except the
/// intercept, and optionally every term without a knot.
std::vector<bool> default_penalty(const BasisDictionary& dict, bool unpenalize_parametric = false);

struct SolverOptions {
  double tol = 1e-9;          // max coefficient change
  int max_sweeps = 100000;
  double kkt_tol = 1e-7;      // internal certificate used to stop
  std::size_t gram_max_p = 500;
  double binomial_dev_ratio_stop = 0.999;
  bool record_objective = false;
};

struct ConvergenceReport {
  bool converged = true;
  long iterations = 0;
  double kkt_violation = 0.0;
  double max_score = 0.0;  // relaxed/sieve fits: max |P_n S_j| on retained columns
  bool separation = false;
  bool pinv_fallback = false;
  std::vector<std::size_t> dropped_columns;
  std::vector<std::string> notes;
};

/// Coefficients of one fit plus how they were obtained.
struct Fit {
  FitKind kind = FitKind::hal;
  Eigen::VectorXd beta;
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double c_target = std::numeric_limits<double>::quiet_NaN();
  double l1_norm = 0.0;
  ConvergenceReport report;
  std::vector<double> objective_trace;

  /// Indices with nonzero coefficient.
  std::vector<std::size_t> support() const;
};

struct PathPoint {
  double lambda = 0.0;
  Eigen::VectorXd beta;
  double l1_norm = 0.0;
  double objective = 0.0;
  double deviance_ratio = 0.0;
  ConvergenceReport report;
  std::vector<double> objective_trace;
};

/// (1/n) sum w_i l(y_i, eta_i): half squared error or logistic log-loss.
double mean_loss(const Problem& prob, const Eigen::VectorXd& eta);
double penalized_objective(const Problem& prob, const Eigen::VectorXd& beta, double lambda);
/// Gradient of the mean loss: -(1/n) sum w_i phi_j(X_i) (y_i - m(eta_i)).
Eigen::VectorXd loss_gradient(const Problem& prob, const Eigen::VectorXd& beta);
/// Largest KKT residual of beta for the penalised problem at lambda.
double kkt_violation(const Problem& prob, const Eigen::VectorXd& beta, double lambda);

/// Coefficients minimising the loss over the unpenalised columns only.
Eigen::VectorXd unpenalized_fit(const Problem& prob);
double lambda_max(const Problem& prob);
/// count log-spaced points from lmax down to ratio * lmax.
std::vector<double> lambda_grid(double lmax, std::size_t count = 100, double ratio = 1e-4);

/// Warm-started coordinate descent along a strictly decreasing lambda grid.
/// Binomial paths stop once the deviance ratio passes the configured limit.
std::vector<PathPoint> fit_path(const Problem& prob, const std::vector<double>& lambdas,
                                const SolverOptions& opt = {});

/// Single penalised fit with an optional warm start.
PathPoint fit_lambda(const Problem& prob, double lambda, const Eigen::VectorXd* warm = nullptr,
                     const SolverOptions& opt = {});

class SolverEngine;

/// Caches a path so repeated constrained fits on one problem are cheap.
class PathSolver {
 public:
  explicit PathSolver(Problem prob, SolverOptions opt = {});

  const Problem& problem() const { return prob_; }
  const std::vector<PathPoint>& path();
  void set_grid(std::vector<double> lambdas);

  /// Penalised fit whose penalised L1 norm is within max(1e-4, 1e-3 C) of C,
  /// by bisection on log lambda between path neighbours.
  Fit constrained(double C);
  Fit at_lambda(double lambda);

 private:
  Fit to_fit(const PathPoint& pt) const;

  Problem prob_;
  SolverOptions opt_;
  std::vector<double> grid_;
  std::optional<std::vector<PathPoint>> path_;
  std::shared_ptr<SolverEngine> engine_;
};

Fit fit_constrained(const Problem& prob, double C, const SolverOptions& opt = {});

/// Unpenalised fit on the given columns (plus the unpenalised ones). Columns
/// that are numerically dependent after pivoted Gram-Schmidt are dropped.
Fit relax_refit(const Problem& prob, const std::vector<std::size_t>& support);

/// max over cols of |(1/n) sum w_i phi_j (y_i - m(eta_i))|.
double max_score(const Problem& prob, const Eigen::VectorXd& beta,
                 const std::vector<std::size_t>& cols);

inline double expit(double eta) {
  return eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
}

/// Mean function m(eta): identity or expit.
Eigen::VectorXd mean_response(FamilyKind f, const Eigen::VectorXd& eta);

/// Everything needed to predict and to rebuild the training design.
struct FittedModel {
  RescaleMap rescale;
  BasisDictionary dictionary;
  FamilyKind family = FamilyKind::gaussian;
  std::vector<bool> penalized;
  Fit fit;
  nlohmann::json tuning = nlohmann::json::object();
  std::vector<double> plugin_weights;  // training weights when estimated by plug-in

  std::vector<std::size_t> support() const { return fit.support(); }
};

struct Prediction {
  Eigen::VectorXd eta;   // linear scale
  Eigen::VectorXd mean;  // expit(eta) for binomial, eta otherwise
  std::size_t clipped = 0;
};

/// eta(x) = sum_j beta_j phi_j(x) on raw covariates.
Prediction predict(const FittedModel& model, const Eigen::MatrixXd& X_raw);

}  // namespace halk
