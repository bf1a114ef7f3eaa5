#include "core/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "core/error.hpp"

namespace halk {

std::string to_string(SelectorKind s) {
  switch (s) {
    case SelectorKind::cv:
      return "cv";
    case SelectorKind::lepski:
      return "lepski";
    case SelectorKind::c_cv_hal:
      return "c-cv-hal";
  }
  return "cv";
}

SelectorKind parse_selector(const std::string& tag) {
  if (tag == "cv") return SelectorKind::cv;
  if (tag == "lepski") return SelectorKind::lepski;
  if (tag == "c-cv-hal" || tag == "c_cv_hal") return SelectorKind::c_cv_hal;
  throw InputError("unknown selector '" + tag + "' (expected cv, lepski, c-cv-hal)");
}

namespace {

void check_training(const TrainingSet& data) {
  if (data.X.rows() != data.y.size())
    throw InputError("covariate rows (" + std::to_string(data.X.rows()) +
                     ") do not match response length (" + std::to_string(data.y.size()) + ")");
  if (!data.binary.empty() && data.binary.size() != static_cast<std::size_t>(data.X.cols()))
    throw InputError("binary flags do not match covariate columns");
  if (data.w.size() != 0 && data.w.size() != data.y.size())
    throw InputError("weight length does not match response length");
}

std::vector<bool> binary_flags(const TrainingSet& data) {
  return data.binary.empty() ? std::vector<bool>(static_cast<std::size_t>(data.X.cols()), false)
                             : data.binary;
}

// Columns `cols` of the dictionary evaluated at rescaled points.
Eigen::MatrixXd evaluate_columns(const BasisDictionary& dict, const std::vector<std::size_t>& cols,
                                 const Eigen::MatrixXd& X, const Eigen::MatrixXd& B) {
  Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(cols.size()));
  std::vector<double> x(static_cast<std::size_t>(X.cols()));
  std::vector<double> b(static_cast<std::size_t>(B.cols()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (std::size_t c = 0; c < x.size(); ++c) x[c] = X(i, static_cast<Eigen::Index>(c));
    for (std::size_t c = 0; c < b.size(); ++c) b[c] = B(i, static_cast<Eigen::Index>(c));
    for (std::size_t t = 0; t < cols.size(); ++t)
      out(i, static_cast<Eigen::Index>(t)) = eval_term(dict.terms[cols[t]], x, b);
  }
  return out;
}

// Default Lepski grid in rescaled units: a regular grid for d <= 2 without
// binary columns, otherwise up to 200 evenly spaced training rows.
void default_lepski_grid(const ScaledCovariates& cov, Eigen::MatrixXd& X, Eigen::MatrixXd& B) {
  const auto d = cov.X.cols();
  if (cov.B.cols() == 0 && d == 1) {
    X = Eigen::VectorXd::LinSpaced(101, 0.0, 1.0);
    B.resize(101, 0);
    return;
  }
  if (cov.B.cols() == 0 && d == 2) {
    X.resize(441, 2);
    for (int a = 0; a < 21; ++a)
      for (int c = 0; c < 21; ++c) {
        X(a * 21 + c, 0) = a / 20.0;
        X(a * 21 + c, 1) = c / 20.0;
      }
    B.resize(441, 0);
    return;
  }
  const Eigen::Index n = cov.X.rows();
  const Eigen::Index m = std::min<Eigen::Index>(n, 200);
  X.resize(m, d);
  B.resize(m, cov.B.cols());
  for (Eigen::Index t = 0; t < m; ++t) {
    const Eigen::Index i = (t * n) / m;
    X.row(t) = cov.X.row(i);
    if (cov.B.cols() > 0) B.row(t) = cov.B.row(i);
  }
}

struct Selected {
  Candidate candidate;
  CandidateDesign design;
  Fit fit;
};

Fit apply_estimator(const Problem& prob, const Fit& hal, FitKind estimator) {
  if (estimator != FitKind::relax) return hal;
  Fit relaxed = relax_refit(prob, hal.support());
  relaxed.lambda = hal.lambda;
  relaxed.c_target = hal.c_target;
  relaxed.report.notes.insert(relaxed.report.notes.end(), hal.report.notes.begin(),
                              hal.report.notes.end());
  return relaxed;
}

nlohmann::json candidate_json(const Candidate& c, std::size_t n) {
  return {{"k", c.k},
          {"restriction", c.restriction.to_string()},
          {"j_max", c.j_max == 0 ? n : c.j_max}};
}

}  // namespace

Eigen::VectorXd resolve_weights(const TrainingSet& data, const FitOptions& opt) {
  const auto n = data.y.size();
  if (data.w.size() != 0) {
    if (data.w.size() != n) throw InputError("weight length does not match response length");
    for (Eigen::Index i = 0; i < n; ++i)
      if (!(data.w(i) > 0.0) || !std::isfinite(data.w(i)))
        throw InputError("weights must be finite and > 0");
    return data.w;
  }
  if (opt.family != FamilyKind::weighted_gaussian) return Eigen::VectorXd::Ones(n);

  // Two-stage plug-in for inverse-variance weights.
  FitOptions pilot_opt = opt;
  pilot_opt.family = FamilyKind::gaussian;
  pilot_opt.estimator = FitKind::hal;
  pilot_opt.selector = SelectorKind::cv;
  const FitResult pilot = fit_model(data, pilot_opt);
  const Eigen::VectorXd fitted = predict(pilot.model, data.X).eta;
  TrainingSet sq = data;
  sq.y = (data.y - fitted).array().square().matrix();
  const double mean_sq = sq.y.mean();
  if (!(mean_sq > 0.0)) return Eigen::VectorXd::Ones(n);
  FitOptions var_opt = pilot_opt;
  var_opt.k_values = {0};
  const FitResult var_fit = fit_model(sq, var_opt);
  const Eigen::VectorXd s2 = predict(var_fit.model, data.X).eta;
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) w(i) = 1.0 / std::max(s2(i), 1e-3 * mean_sq);
  return w;
}

FitResult fit_model(const TrainingSet& data, const FitOptions& opt) {
  check_training(data);
  if (opt.k_values.empty() || opt.restrictions.empty() || opt.j_max_values.empty())
    throw InputError("k, restriction and J_max candidate lists must be nonempty");
  for (int k : opt.k_values)
    if (k < 0) throw InputError("spline order k must be >= 0");
  if (opt.estimator == FitKind::sieve && opt.selector != SelectorKind::cv)
    throw InputError("the sieve estimator is tuned by cross-validation only");

  FitResult out;
  FittedModel& model = out.model;
  model.rescale = opt.rescale ? *opt.rescale : fit_rescale(data.X, binary_flags(data), data.names);
  const ScaledCovariates cov = apply_rescale(model.rescale, data.X);
  const Eigen::VectorXd w = resolve_weights(data, opt);
  if (data.w.size() == 0 && opt.family == FamilyKind::weighted_gaussian)
    model.plugin_weights.assign(w.data(), w.data() + w.size());
  model.family = opt.family;

  std::vector<Candidate> candidates;
  for (int k : opt.k_values)
    for (const auto& r : opt.restrictions)
      for (auto j : opt.j_max_values) candidates.push_back({k, r, j, opt.c_values});

  CVInput cvdata{&cov, data.y, w, opt.family};
  const FitKind cv_estimator =
      opt.selector == SelectorKind::cv ? opt.estimator : FitKind::hal;
  out.cv = cv_select(cvdata, candidates, opt.folds, opt.seed, cv_estimator, opt.dictionary);
  const CVRow& best = out.cv.best();
  const Candidate cand = out.cv.candidates[best.candidate];
  CandidateDesign cd = build_candidate(cov, cand, opt.dictionary);
  const Problem prob{&cd.design, data.y, w, opt.family, cd.penalized};

  nlohmann::json tuning;
  tuning["selector"] = to_string(opt.selector);
  tuning["estimator"] = to_string(opt.estimator);
  tuning["folds"] = opt.folds;
  tuning["seed"] = opt.seed;
  tuning["candidate"] = candidate_json(cand, static_cast<std::size_t>(data.y.size()));
  tuning["cv_risk"] = best.risk;
  tuning["cv_se"] = best.se;
  tuning["C_cv"] = best.C;
  if (data.w.size() != 0) tuning["weights"] = "supplied";
  else if (!model.plugin_weights.empty()) tuning["weights"] = "plugin";
  else tuning["weights"] = "unit";

  Fit fit;
  double c_used = best.C;
  if (opt.estimator == FitKind::sieve) {
    std::vector<std::size_t> all(static_cast<std::size_t>(cd.design.cols()));
    for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
    fit = relax_refit(prob, all);
    fit.kind = FitKind::sieve;
    c_used = fit.l1_norm;
  } else {
    PathSolver solver(prob);
    solver.set_grid(candidate_lambda_grid(cd, cvdata, opt.dictionary));
    Fit hal;
    if (best.lambda_index != std::numeric_limits<std::size_t>::max()) {
      const auto& pt = solver.path().at(best.lambda_index);
      hal.kind = FitKind::hal;
      hal.beta = pt.beta;
      hal.lambda = pt.lambda;
      hal.l1_norm = pt.l1_norm;
      hal.report = pt.report;
    } else {
      hal = solver.constrained(best.C);
    }

    if (opt.selector == SelectorKind::lepski) {
      double c_cv = best.C;
      if (!(c_cv > 0.0)) {
        for (const auto& pt : solver.path())
          if (pt.l1_norm > 0.0) {
            c_cv = pt.l1_norm;
            break;
          }
      }
      if (!(c_cv > 0.0)) throw NumericError("Lepski undersmoothing: every path fit has zero norm");
      Eigen::MatrixXd gx, gb;
      if (opt.lepski_grid.size() > 0) {
        const auto g = apply_rescale(model.rescale, opt.lepski_grid);
        gx = g.X;
        gb = g.B;
      } else {
        default_lepski_grid(cov, gx, gb);
      }
      InferenceRequest req;
      req.method = opt.lepski_variance;
      auto eval = [&](double C) {
        const Fit f = apply_estimator(prob, solver.constrained(C), opt.estimator);
        InferenceContext ctx{&cd.design, data.y, w, opt.family, f.beta, cd.penalized};
        const auto support = ctx.support();
        const Eigen::MatrixXd phi = evaluate_columns(cd.dictionary, support, gx, gb);
        const InferenceResult ci = confidence_intervals(ctx, phi, req);
        return std::make_pair(ci.estimate, ci.se);
      };
      out.lepski = lepski_undersmooth(lepski_grid(c_cv, opt.lepski_ratio, opt.lepski_steps), eval,
                                      opt.lepski_constant);
      hal = solver.constrained(out.lepski->chosen_C);
      nlohmann::json lj;
      lj["C_grid"] = out.lepski->C;
      lj["statistic"] = out.lepski->statistic;
      lj["chosen_C"] = out.lepski->chosen_C;
      lj["never_satisfied"] = out.lepski->never_satisfied;
      lj["constant"] = opt.lepski_constant;
      nlohmann::json skipped = nlohmann::json::array();
      for (const auto& [c, why] : out.lepski->skipped) skipped.push_back({{"C", c}, {"reason", why}});
      lj["skipped"] = skipped;
      tuning["lepski"] = lj;
    }
    c_used = hal.l1_norm;
    fit = apply_estimator(prob, hal, opt.estimator);
  }
  tuning["C"] = c_used;
  tuning["lambda"] = std::isnan(fit.lambda) ? nlohmann::json(nullptr) : nlohmann::json(fit.lambda);

  model.dictionary = std::move(cd.dictionary);
  model.penalized = std::move(cd.penalized);
  model.fit = std::move(fit);
  model.tuning = std::move(tuning);
  return out;
}

TrainingView training_view(const FittedModel& model, const TrainingSet& data) {
  check_training(data);
  TrainingView v;
  v.cov = apply_rescale(model.rescale, data.X);
  v.design = assemble(model.dictionary, v.cov.X, v.cov.B);
  if (v.design.cols() != model.fit.beta.size())
    throw InputError("training data does not reproduce the model dictionary");
  v.y = data.y;
  const auto n = data.y.size();
  if (data.w.size() != 0) {
    v.w = data.w;
  } else if (!model.plugin_weights.empty()) {
    if (static_cast<Eigen::Index>(model.plugin_weights.size()) != n)
      throw InputError("training data row count does not match the stored plug-in weights");
    v.w = Eigen::Map<const Eigen::VectorXd>(model.plugin_weights.data(), n);
  } else {
    if (model.family == FamilyKind::weighted_gaussian)
      throw InputError("weighted_gaussian model needs the training weights");
    v.w = Eigen::VectorXd::Ones(n);
  }
  return v;
}

Eigen::MatrixXd support_evaluations(const FittedModel& model, const Eigen::MatrixXd& grid_raw,
                                    std::size_t* clipped) {
  const auto g = apply_rescale(model.rescale, grid_raw);
  if (clipped) *clipped = g.clipped;
  return evaluate_columns(model.dictionary, model.support(), g.X, g.B);
}

InferenceResult model_inference(const FittedModel& model, const TrainingSet& data,
                                const Eigen::MatrixXd& grid_raw, const InferenceRequest& req) {
  const TrainingView v = training_view(model, data);
  InferenceContext ctx{&v.design, v.y, v.w, model.family, model.fit.beta, model.penalized};
  std::size_t clipped = 0;
  const Eigen::MatrixXd phi = support_evaluations(model, grid_raw, &clipped);
  InferenceResult r = confidence_intervals(ctx, phi, req);
  r.grid = grid_raw;
  if (clipped > 0)
    r.warnings.push_back(std::to_string(clipped) + " grid value(s) clipped to the training range");
  return r;
}

ScoreReport model_score_diagnostics(const FittedModel& model, const TrainingSet& data,
                                    const Eigen::MatrixXd& grid_raw) {
  const TrainingView v = training_view(model, data);
  InferenceContext ctx{&v.design, v.y, v.w, model.family, model.fit.beta, model.penalized};
  const Eigen::MatrixXd phi = grid_raw.size() > 0 ? support_evaluations(model, grid_raw)
                                                  : Eigen::MatrixXd();
  return score_diagnostics(ctx, {}, phi);
}

}  // namespace halk
