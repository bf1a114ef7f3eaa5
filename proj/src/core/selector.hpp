#pragma once

// Tuning-parameter selection: V-fold cross-validation over (k, restriction,
// J_max, C) and Lepski-type undersmoothing of the L1 bound.

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "core/solver.hpp"

namespace halk {

/// Structural candidate. With empty c_values the L1 bound is tuned along the
/// lambda path; otherwise each listed C is a separate candidate.
struct Candidate {
  int k = 1;
  SubmodelRestriction restriction;
  std::size_t j_max = 0;  // 0: every observed knot
  std::vector<double> c_values;
};

struct DictionaryOptions {
  std::size_t chain_cap = kDefaultChainCap;
  bool unpenalize_parametric = false;
  std::vector<BasisIndex> extra_terms;  // merged into the knot sets (rescaled units)
  std::size_t lambda_count = 100;
  double lambda_ratio = 1e-4;
};

/// Dictionary, training design and penalty pattern for one candidate.
struct CandidateDesign {
  BasisDictionary dictionary;
  DesignMatrix design;
  std::vector<bool> penalized;
};

CandidateDesign build_candidate(const ScaledCovariates& cov, const Candidate& cand,
                                const DictionaryOptions& opt);

struct CVRow {
  std::size_t candidate = 0;  // index into CVReport::candidates
  std::size_t lambda_index = std::numeric_limits<std::size_t>::max();  // max(): not on a path
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double C = 0.0;  // full-data L1 norm of the corresponding fit
  double risk = 0.0;
  double se = 0.0;
  std::vector<double> fold_risks;
};

struct CVReport {
  int folds = 0;
  std::uint64_t seed = 0;
  FitKind estimator = FitKind::hal;
  std::vector<int> fold_of;  // per observation
  std::vector<Candidate> candidates;
  std::vector<CVRow> table;
  std::vector<std::pair<std::size_t, std::string>> failures;  // candidate, reason
  std::size_t chosen = 0;  // index into table

  const CVRow& best() const { return table.at(chosen); }
};

/// Fold labels from a seeded shuffle; position t of the permutation gets
/// fold t mod V, so fold sizes differ by at most one.
std::vector<int> make_folds(std::size_t n, int V, std::uint64_t seed);

struct CVInput {
  const ScaledCovariates* cov = nullptr;
  Eigen::VectorXd y;
  Eigen::VectorXd w;
  FamilyKind family = FamilyKind::gaussian;
};

/// Risk is the mean over folds of the fold-mean validation loss: w (y - eta)^2
/// or logistic log-loss. Ties go to smaller C, then smaller k, then smaller
/// J_max.
CVReport cv_select(const CVInput& data, const std::vector<Candidate>& candidates, int V,
                   std::uint64_t seed, FitKind estimator, const DictionaryOptions& opt = {});

/// Lambda grid used for a candidate: computed from the full data.
std::vector<double> candidate_lambda_grid(const CandidateDesign& cd, const CVInput& data,
                                          const DictionaryOptions& opt);

/// The HAL (non-relaxed) CV choice of C, used to pick the relax support.
double relax_selector_c_cv_of_hal(const CVInput& data, const Candidate& cand, int V,
                                  std::uint64_t seed, const DictionaryOptions& opt = {});

struct LepskiResult {
  std::vector<double> C;          // values that were evaluated successfully
  std::vector<double> statistic;  // max_x |dQ| - c |dse| between neighbours
  std::vector<std::pair<double, std::string>> skipped;
  std::size_t chosen = 0;
  double chosen_C = 0.0;
  bool never_satisfied = false;
};

/// Smallest j with |Q_{j+1}(x) - Q_j(x)| <= c |se_{j+1}(x) - se_j(x)| at every
/// grid point; the last C with never_satisfied set otherwise.
LepskiResult lepski_rule(const std::vector<double>& C, const std::vector<Eigen::VectorXd>& Q,
                         const std::vector<Eigen::VectorXd>& se, double constant = 1.96);

/// Evaluates (Q, se) for each C via the callback; values whose callback throws
/// are skipped and recorded.
using LepskiEval = std::function<std::pair<Eigen::VectorXd, Eigen::VectorXd>(double)>;
LepskiResult lepski_undersmooth(const std::vector<double>& C_grid, const LepskiEval& eval,
                                double constant = 1.96);

/// {c_cv * ratio^t, t = 0..steps}.
std::vector<double> lepski_grid(double c_cv, double ratio = 1.25, int steps = 12);

}  // namespace halk
