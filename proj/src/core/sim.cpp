#include "core/sim.hpp"

#include <algorithm>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <cmath>
#include <limits>
#include <random>

#include "core/error.hpp"
#include "core/parallel.hpp"

namespace halk {
namespace {

std::string truth_tag(TruthKind t) {
  switch (t) {
    case TruthKind::smooth_sin:
      return "smooth_sin";
    case TruthKind::poly:
      return "poly";
    case TruthKind::spline_sparse:
      return "spline_sparse";
  }
  return "smooth_sin";
}

RescaleMap unit_map(int d) {
  RescaleMap m;
  for (int l = 0; l < d; ++l) m.columns.push_back({"x" + std::to_string(l + 1), false, 0.0, 1.0});
  return m;
}

Eigen::MatrixXd draw_covariates(const DGPSpec& spec, std::size_t n, std::mt19937_64& rng) {
  boost::random::uniform_01<double> unif;
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), spec.d);
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (int l = 0; l < spec.d; ++l) {
      if (spec.law == CovariateLaw::uniform) {
        X(i, l) = unif(rng);
      } else {
        const auto m = static_cast<std::uint64_t>(spec.mass_points);
        X(i, l) = static_cast<double>(rng() % m + 1) / static_cast<double>(m);
      }
    }
  return X;
}

Eigen::VectorXd draw_response(const DGPSpec& spec, const Eigen::VectorXd& truth,
                              std::mt19937_64& rng) {
  Eigen::VectorXd y(truth.size());
  if (spec.noise == NoiseKind::gaussian) {
    boost::random::normal_distribution<double> norm(0.0, 1.0);
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = truth(i) + spec.sigma * norm(rng);
  } else {
    boost::random::uniform_01<double> unif;
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = unif(rng) < expit(truth(i)) ? 1.0 : 0.0;
  }
  return y;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size();
  if (m == 0) return std::numeric_limits<double>::quiet_NaN();
  return m % 2 == 1 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

}  // namespace

void DGPSpec::validate() const {
  if (d < 1) throw InputError("DGP dimension d must be >= 1");
  if (noise == NoiseKind::gaussian && !(sigma >= 0.0 && std::isfinite(sigma)))
    throw InputError("DGP noise sigma must be finite and >= 0");
  if (law == CovariateLaw::discrete_uniform && mass_points < 1)
    throw InputError("discrete_uniform needs at least one mass point");
  if (truth == TruthKind::spline_sparse) {
    if (terms.empty()) throw InputError("spline_sparse truth needs at least one term");
    for (const auto& t : terms) {
      if (t.index.chain.dimension() != d)
        throw InputError("spline_sparse term dimension does not match d");
      t.index.validate();
    }
  }
}

double DGPSpec::truth_value(std::span<const double> x) const {
  double q = 0.0;
  switch (truth) {
    case TruthKind::smooth_sin:
      for (double v : x) q += std::sin(3.0 * v);
      break;
    case TruthKind::poly:
      for (double v : x) q += v * v - 0.5 * v;
      if (x.size() >= 2) q += x[0] * x[1];
      break;
    case TruthKind::spline_sparse:
      for (const auto& t : terms) q += t.coef * eval_basis(t.index, x);
      break;
  }
  return q;
}

Eigen::VectorXd DGPSpec::truth_values(const Eigen::MatrixXd& X) const {
  Eigen::VectorXd q(X.rows());
  std::vector<double> x(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (std::size_t l = 0; l < x.size(); ++l) x[l] = X(i, static_cast<Eigen::Index>(l));
    q(i) = truth_value(x);
  }
  return q;
}

Dataset generate(const DGPSpec& spec, std::size_t n, std::uint64_t rep) {
  spec.validate();
  if (n < 10) throw InputError("simulated sample size must be >= 10");
  std::mt19937_64 rng(mix_seed(mix_seed(spec.seed, n), rep));
  Dataset out;
  out.X = draw_covariates(spec, n, rng);
  out.truth = spec.truth_values(out.X);
  out.y = draw_response(spec, out.truth, rng);
  return out;
}

Dataset generate_fixed_design(const DGPSpec& spec, std::size_t n, std::uint64_t rep) {
  spec.validate();
  if (n < 10) throw InputError("simulated sample size must be >= 10");
  std::mt19937_64 design_rng(mix_seed(spec.seed, n));
  Dataset out;
  out.X = draw_covariates(spec, n, design_rng);
  out.truth = spec.truth_values(out.X);
  std::mt19937_64 noise_rng(mix_seed(mix_seed(spec.seed ^ 0x5bd1e995ULL, n), rep));
  out.y = draw_response(spec, out.truth, noise_rng);
  return out;
}

std::size_t knot_budget(std::size_t n, int k) {
  const double kstar = k + 1.0;
  const double nn = static_cast<double>(n);
  return static_cast<std::size_t>(
      std::max(1.0, std::ceil(std::pow(nn, 1.0 / (2.0 * kstar + 1.0)) * std::log(nn))));
}

Eigen::MatrixXd evaluation_grid(int d, bool interior) {
  if (d < 1) throw InputError("grid dimension must be >= 1");
  const int per_axis = d == 1 ? 101 : d == 2 ? 21 : 11;
  const double lo = interior ? 0.05 : 0.0;
  const double hi = interior ? 0.95 : 1.0;
  std::size_t total = 1;
  for (int l = 0; l < d; ++l) {
    total *= static_cast<std::size_t>(per_axis);
    if (total > 2000000) throw InputError("evaluation grid too large for d = " + std::to_string(d));
  }
  Eigen::MatrixXd G(static_cast<Eigen::Index>(total), d);
  for (std::size_t r = 0; r < total; ++r) {
    std::size_t rem = r;
    for (int l = d - 1; l >= 0; --l) {
      const auto a = rem % static_cast<std::size_t>(per_axis);
      rem /= static_cast<std::size_t>(per_axis);
      G(static_cast<Eigen::Index>(r), l) =
          lo + (hi - lo) * static_cast<double>(a) / static_cast<double>(per_axis - 1);
    }
  }
  return G;
}

FitOptions EstimatorConfig::options(const DGPSpec& spec, std::size_t n, std::uint64_t seed) const {
  FitOptions opt;
  opt.family = spec.noise == NoiseKind::bernoulli ? FamilyKind::binomial : FamilyKind::gaussian;
  opt.estimator = estimator;
  opt.selector = selector;
  opt.k_values = {k};
  opt.restrictions = {restriction};
  opt.j_max_values = {j_max ? *j_max : knot_budget(n, k)};
  opt.folds = folds;
  opt.seed = seed;
  opt.lepski_constant = lepski_constant;
  opt.lepski_variance = lepski_variance;
  opt.rescale = unit_map(spec.d);
  if (spec.truth == TruthKind::spline_sparse && spec.add_truth_terms)
    for (const auto& t : spec.terms)
      if (t.index.chain.order() == k) opt.dictionary.extra_terms.push_back(t.index);
  return opt;
}

RateSummary summarize_rate(const std::vector<RateRow>& rows) {
  RateSummary s;
  for (const auto& r : rows)
    if (std::find(s.n.begin(), s.n.end(), r.n) == s.n.end()) s.n.push_back(r.n);
  std::sort(s.n.begin(), s.n.end());
  for (auto n : s.n) {
    std::vector<double> v;
    int failed = 0;
    for (const auto& r : rows) {
      if (r.n != n) continue;
      if (std::isfinite(r.rmse)) v.push_back(r.rmse);
      else ++failed;
    }
    s.median_rmse.push_back(median(std::move(v)));
    s.failures.push_back(failed);
  }
  const auto m = s.n.size();
  s.slope = s.slope_se = std::numeric_limits<double>::quiet_NaN();
  if (m < 2) return s;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    mx += std::log(static_cast<double>(s.n[i]));
    my += std::log(s.median_rmse[i]);
  }
  mx /= static_cast<double>(m);
  my /= static_cast<double>(m);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double dx = std::log(static_cast<double>(s.n[i])) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(s.median_rmse[i]) - my);
  }
  s.slope = sxy / sxx;
  if (m > 2) {
    double ssr = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double fit = my + s.slope * (std::log(static_cast<double>(s.n[i])) - mx);
      const double e = std::log(s.median_rmse[i]) - fit;
      ssr += e * e;
    }
    s.slope_se = std::sqrt(ssr / static_cast<double>(m - 2) / sxx);
  }
  return s;
}

RateReport rate_experiment(const DGPSpec& spec, const EstimatorConfig& est,
                           const std::vector<std::size_t>& n_list, int reps, bool interior) {
  spec.validate();
  if (n_list.size() < 4) throw InputError("rate experiment needs at least 4 sample sizes");
  for (std::size_t i = 0; i < n_list.size(); ++i) {
    if (n_list[i] < 10) throw InputError("simulated sample size must be >= 10");
    if (i > 0 && n_list[i] <= n_list[i - 1])
      throw InputError("rate experiment sample sizes must be strictly increasing");
  }
  if (reps < 1) throw InputError("replicate count must be >= 1");

  RateReport rep;
  rep.config = {{"experiment", "rate"},
                {"dgp", to_json(spec)},
                {"estimator", to_json(est)},
                {"n_list", n_list},
                {"reps", reps},
                {"interior", interior}};
  const Eigen::MatrixXd grid = evaluation_grid(spec.d, interior);
  const Eigen::VectorXd truth = spec.truth_values(grid);
  const auto R = static_cast<std::size_t>(reps);
  rep.rows.resize(n_list.size() * R);
  parallel_for(rep.rows.size(), [&](std::size_t t) {
    RateRow& row = rep.rows[t];
    row.n = n_list[t / R];
    row.rep = static_cast<int>(t % R);
    row.seed = mix_seed(mix_seed(spec.seed, row.n), static_cast<std::uint64_t>(row.rep));
    try {
      const Dataset data = generate(spec, row.n, static_cast<std::uint64_t>(row.rep));
      TrainingSet ts{data.X, {}, {}, data.y, {}};
      const FitResult fit = fit_model(ts, est.options(spec, row.n, row.seed));
      const Eigen::VectorXd eta = predict(fit.model, grid).eta;
      row.rmse = std::sqrt((eta - truth).squaredNorm() / static_cast<double>(truth.size()));
    } catch (const std::exception& e) {
      row.rmse = std::numeric_limits<double>::quiet_NaN();
      row.error = e.what();
    }
  });
  rep.summary = summarize_rate(rep.rows);
  return rep;
}

CoverageSummary summarize_coverage(const std::vector<CoverageRow>& rows,
                                   const std::vector<double>& levels, std::size_t probes) {
  CoverageSummary s;
  s.levels = levels;
  const auto L = levels.size();
  std::vector<std::vector<long>> hits(L, std::vector<long>(probes, 0));
  for (const auto& r : rows) {
    if (!r.error.empty()) {
      ++s.failures;
      continue;
    }
    ++s.replicates;
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t j = 0; j < probes; ++j)
        if (r.covered.at(l).at(j)) ++hits[l][j];
  }
  const double R = static_cast<double>(s.replicates);
  s.coverage.assign(L, std::vector<double>(probes, std::numeric_limits<double>::quiet_NaN()));
  s.mc_error = s.coverage;
  s.average.assign(L, std::numeric_limits<double>::quiet_NaN());
  if (s.replicates == 0) return s;
  for (std::size_t l = 0; l < L; ++l) {
    double total = 0.0;
    for (std::size_t j = 0; j < probes; ++j) {
      const double c = static_cast<double>(hits[l][j]) / R;
      s.coverage[l][j] = c;
      s.mc_error[l][j] = std::sqrt(c * (1.0 - c) / R);
      total += c;
    }
    s.average[l] = probes > 0 ? total / static_cast<double>(probes) : 0.0;
  }
  return s;
}

CoverageReport coverage_experiment(const DGPSpec& spec, const EstimatorConfig& est,
                                   const CoverageConfig& cfg) {
  spec.validate();
  if (cfg.n < 10) throw InputError("simulated sample size must be >= 10");
  if (cfg.reps < 1) throw InputError("replicate count must be >= 1");
  if (cfg.levels.empty()) throw InputError("coverage experiment needs at least one level");
  for (double lv : cfg.levels)
    if (!(lv > 0.0 && lv < 1.0)) throw InputError("confidence levels must lie in (0, 1)");
  if (cfg.probes.rows() == 0 || cfg.probes.cols() != spec.d)
    throw InputError("coverage probes must be a nonempty m x d matrix");

  CoverageReport rep;
  rep.probes = cfg.probes;
  nlohmann::json probes_json = nlohmann::json::array();
  for (Eigen::Index i = 0; i < cfg.probes.rows(); ++i) {
    std::vector<double> p(static_cast<std::size_t>(cfg.probes.cols()));
    for (Eigen::Index l = 0; l < cfg.probes.cols(); ++l) p[static_cast<std::size_t>(l)] = cfg.probes(i, l);
    probes_json.push_back(p);
  }
  rep.config = {{"experiment", "coverage"},
                {"dgp", to_json(spec)},
                {"estimator", to_json(est)},
                {"n", cfg.n},
                {"reps", cfg.reps},
                {"levels", cfg.levels},
                {"probes", probes_json},
                {"method", to_string(cfg.method)},
                {"fixed_design", cfg.fixed_design}};
  if (cfg.reps < 100)
    rep.warnings.push_back("fewer than 100 replicates: coverage estimates are coarse");

  const Eigen::VectorXd truth = spec.truth_values(cfg.probes);
  std::vector<double> z;
  for (double lv : cfg.levels) z.push_back(normal_two_sided_quantile(lv));
  rep.rows.resize(static_cast<std::size_t>(cfg.reps));
  parallel_for(rep.rows.size(), [&](std::size_t r) {
    CoverageRow& row = rep.rows[r];
    row.rep = static_cast<int>(r);
    row.seed = mix_seed(mix_seed(spec.seed, cfg.n), r);
    row.truth = truth;
    try {
      const Dataset data = cfg.fixed_design ? generate_fixed_design(spec, cfg.n, r)
                                            : generate(spec, cfg.n, r);
      TrainingSet ts{data.X, {}, {}, data.y, {}};
      const FitResult fit = fit_model(ts, est.options(spec, cfg.n, row.seed));
      InferenceRequest req;
      req.level = cfg.levels.front();
      req.method = cfg.method;
      const InferenceResult ci = model_inference(fit.model, ts, cfg.probes, req);
      row.estimate = ci.estimate;
      row.se = ci.se;
      row.covered.assign(cfg.levels.size(), std::vector<bool>(truth.size(), false));
      for (std::size_t l = 0; l < z.size(); ++l)
        for (Eigen::Index j = 0; j < truth.size(); ++j) {
          // Roundoff allowance so that exact fits with zero width still cover.
          const double slack = 1e-9 * std::max(1.0, std::abs(truth(j)));
          row.covered[l][static_cast<std::size_t>(j)] =
              std::abs(row.estimate(j) - truth(j)) <= z[l] * row.se(j) + slack;
        }
    } catch (const std::exception& e) {
      row.error = e.what();
      row.estimate = row.se = Eigen::VectorXd::Constant(truth.size(),
                                                         std::numeric_limits<double>::quiet_NaN());
      row.covered.assign(cfg.levels.size(), std::vector<bool>(truth.size(), false));
    }
  });
  rep.summary = summarize_coverage(rep.rows, cfg.levels, static_cast<std::size_t>(truth.size()));
  if (rep.summary.failures > 0)
    rep.warnings.push_back(std::to_string(rep.summary.failures) + " replicate(s) failed");
  return rep;
}

nlohmann::json to_json(const DGPSpec& spec) {
  nlohmann::json j;
  j["d"] = spec.d;
  j["truth"] = truth_tag(spec.truth);
  j["noise"] = spec.noise == NoiseKind::gaussian ? "gaussian" : "bernoulli";
  j["sigma"] = spec.sigma;
  j["covariates"] = spec.law == CovariateLaw::uniform ? "uniform" : "discrete_uniform";
  j["mass_points"] = spec.mass_points;
  j["seed"] = spec.seed;
  j["add_truth_terms"] = spec.add_truth_terms;
  if (spec.truth == TruthKind::spline_sparse) {
    nlohmann::json terms = nlohmann::json::array();
    for (const auto& t : spec.terms) {
      std::vector<int> depths(t.index.chain.depths().begin(), t.index.chain.depths().end());
      terms.push_back({{"k", t.index.chain.order()},
                       {"chain", depths},
                       {"knot", t.index.knot},
                       {"coef", t.coef}});
    }
    j["terms"] = terms;
  }
  return j;
}

DGPSpec dgp_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("dgp must be a JSON object");
  DGPSpec s;
  try {
    s.d = j.value("d", 1);
    const std::string truth = j.value("truth", std::string("smooth_sin"));
    if (truth == "smooth_sin") s.truth = TruthKind::smooth_sin;
    else if (truth == "poly") s.truth = TruthKind::poly;
    else if (truth == "spline_sparse") s.truth = TruthKind::spline_sparse;
    else throw InputError("unknown truth '" + truth + "'");
    const std::string noise = j.value("noise", std::string("gaussian"));
    if (noise == "gaussian") s.noise = NoiseKind::gaussian;
    else if (noise == "bernoulli") s.noise = NoiseKind::bernoulli;
    else throw InputError("unknown noise '" + noise + "'");
    s.sigma = j.value("sigma", 0.5);
    const std::string law = j.value("covariates", std::string("uniform"));
    if (law == "uniform") s.law = CovariateLaw::uniform;
    else if (law == "discrete_uniform") s.law = CovariateLaw::discrete_uniform;
    else throw InputError("unknown covariate law '" + law + "'");
    s.mass_points = j.value("mass_points", 20);
    s.seed = j.value("seed", std::uint64_t{1});
    s.add_truth_terms = j.value("add_truth_terms", true);
    if (j.contains("terms")) {
      for (const auto& t : j.at("terms")) {
        const int k = t.at("k").get<int>();
        std::vector<std::uint8_t> depths;
        for (int v : t.at("chain").get<std::vector<int>>()) {
          if (v < 0 || v > k + 1) throw InputError("chain depth out of range in truth term");
          depths.push_back(static_cast<std::uint8_t>(v));
        }
        SparseTerm term;
        term.index.chain = SubsetChain::from_depths(depths, k);
        term.index.knot = t.value("knot", std::vector<double>{});
        term.coef = t.at("coef").get<double>();
        s.terms.push_back(std::move(term));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed dgp: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json to_json(const EstimatorConfig& est) {
  nlohmann::json j;
  j["k"] = est.k;
  j["estimator"] = to_string(est.estimator);
  j["selector"] = to_string(est.selector);
  j["folds"] = est.folds;
  j["j_max"] = est.j_max ? nlohmann::json(*est.j_max) : nlohmann::json("auto");
  j["restriction"] = est.restriction.to_string();
  j["lepski_constant"] = est.lepski_constant;
  j["lepski_variance"] = to_string(est.lepski_variance);
  return j;
}

EstimatorConfig estimator_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("estimator config must be a JSON object");
  EstimatorConfig e;
  try {
    e.k = j.value("k", 1);
    e.estimator = parse_fit_kind(j.value("estimator", std::string("hal")));
    e.selector = parse_selector(j.value("selector", std::string("cv")));
    e.folds = j.value("folds", 5);
    if (j.contains("j_max") && !j.at("j_max").is_string())
      e.j_max = j.at("j_max").get<std::size_t>();
    e.restriction = SubmodelRestriction::parse(j.value("restriction", std::string("full")));
    e.lepski_constant = j.value("lepski_constant", 1.96);
    e.lepski_variance =
        parse_variance_method(j.value("lepski_variance", std::string("orthonormal")));
  } catch (const nlohmann::json::exception& e2) {
    throw InputError(std::string("malformed estimator config: ") + e2.what());
  }
  if (e.k < 0) throw InputError("spline order k must be >= 0");
  return e;
}

}  // namespace halk
