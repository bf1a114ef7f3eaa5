#pragma once

// End-to-end fitting: rescale, build candidate dictionaries, select tuning
// parameters and produce a FittedModel; plus inference on a fitted model.

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/inference.hpp"
#include "core/selector.hpp"

namespace halk {

enum class SelectorKind { cv, lepski, c_cv_hal };

std::string to_string(SelectorKind s);
SelectorKind parse_selector(const std::string& tag);

struct TrainingSet {
  Eigen::MatrixXd X;  // raw covariates, continuous and binary columns
  std::vector<bool> binary;
  std::vector<std::string> names;
  Eigen::VectorXd y;
  Eigen::VectorXd w;  // empty: unit weights (or plug-in for weighted_gaussian)
};

struct FitOptions {
  FamilyKind family = FamilyKind::gaussian;
  FitKind estimator = FitKind::hal;
  SelectorKind selector = SelectorKind::cv;
  std::vector<int> k_values{1};
  std::vector<SubmodelRestriction> restrictions{SubmodelRestriction::full()};
  std::vector<std::size_t> j_max_values{0};
  std::vector<double> c_values;  // explicit C candidates instead of the path
  int folds = 5;
  std::uint64_t seed = 1;
  DictionaryOptions dictionary;
  double lepski_constant = 1.96;
  double lepski_ratio = 1.25;
  int lepski_steps = 12;
  Eigen::MatrixXd lepski_grid;  // raw units; empty: default grid
  VarianceMethod lepski_variance = VarianceMethod::orthonormal;
  std::optional<RescaleMap> rescale;  // fixed map instead of the min-max fit
};

struct FitResult {
  FittedModel model;
  CVReport cv;
  std::optional<LepskiResult> lepski;
};

FitResult fit_model(const TrainingSet& data, const FitOptions& opt);

/// Training design of a fitted model rebuilt from the training data.
struct TrainingView {
  ScaledCovariates cov;
  DesignMatrix design;
  Eigen::VectorXd y, w;
};

TrainingView training_view(const FittedModel& model, const TrainingSet& data);

/// Support-column evaluations at raw grid points, in support order.
Eigen::MatrixXd support_evaluations(const FittedModel& model, const Eigen::MatrixXd& grid_raw,
                                    std::size_t* clipped = nullptr);

InferenceResult model_inference(const FittedModel& model, const TrainingSet& data,
                                const Eigen::MatrixXd& grid_raw, const InferenceRequest& req);

ScoreReport model_score_diagnostics(const FittedModel& model, const TrainingSet& data,
                                    const Eigen::MatrixXd& grid_raw);

/// Observation weights used for fitting: supplied weights, ones, or the
/// two-stage plug-in (k=0 HAL on squared pilot residuals, floored at 1e-3 of
/// their mean, inverted) for weighted_gaussian without weights.
Eigen::VectorXd resolve_weights(const TrainingSet& data, const FitOptions& opt);

}  // namespace halk
