#include "core/selector.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "core/error.hpp"
#include "core/parallel.hpp"

namespace halk {

CandidateDesign build_candidate(const ScaledCovariates& cov, const Candidate& cand,
                                const DictionaryOptions& opt) {
  const std::size_t j_max = cand.j_max == 0 ? static_cast<std::size_t>(cov.X.rows()) : cand.j_max;
  BasisDictionary dict = build_dictionary(cov.X, cand.k, cand.restriction, j_max, opt.chain_cap);
  if (!opt.extra_terms.empty()) dict = add_terms(dict, opt.extra_terms);
  dict = binary_expand(dict, cov.B);
  CandidateDesign cd;
  cd.design = assemble(dict, cov.X, cov.B);
  cd.penalized = default_penalty(dict, opt.unpenalize_parametric);
  cd.dictionary = std::move(dict);
  return cd;
}

std::vector<int> make_folds(std::size_t n, int V, std::uint64_t seed) {
  if (V < 2) throw InputError("cross-validation needs V >= 2 folds");
  if (static_cast<std::size_t>(V) > n) throw InputError("more folds than observations");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit bounded draw keeps folds identical across
  // standard library implementations.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  std::vector<int> fold(n);
  for (std::size_t t = 0; t < n; ++t) fold[perm[t]] = static_cast<int>(t % static_cast<std::size_t>(V));
  return fold;
}

std::vector<double> candidate_lambda_grid(const CandidateDesign& cd, const CVInput& data,
                                          const DictionaryOptions& opt) {
  Problem prob{&cd.design, data.y, data.w, data.family, cd.penalized};
  return lambda_grid(lambda_max(prob), opt.lambda_count, opt.lambda_ratio);
}

namespace {

double validation_loss(FamilyKind family, double y, double w, double eta) {
  if (family == FamilyKind::binomial) {
    const double sp = eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
    return w * (sp - y * eta);
  }
  const double r = y - eta;
  return w * r * r;
}

struct FoldData {
  std::vector<Eigen::Index> train, valid;
  DesignMatrix train_design, valid_design;
  Eigen::VectorXd y_train, w_train, y_valid, w_valid;
};

std::vector<FoldData> split_folds(const DesignMatrix& design, const CVInput& data,
                                  const std::vector<int>& fold_of, int V) {
  std::vector<FoldData> folds(static_cast<std::size_t>(V));
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    for (int v = 0; v < V; ++v) {
      auto& f = folds[static_cast<std::size_t>(v)];
      (fold_of[i] == v ? f.valid : f.train).push_back(static_cast<Eigen::Index>(i));
    }
  }
  for (auto& f : folds) {
    f.train_design = design.select_rows(f.train);
    f.valid_design = design.select_rows(f.valid);
    f.y_train = data.y(f.train);
    f.w_train = data.w(f.train);
    f.y_valid = data.y(f.valid);
    f.w_valid = data.w(f.valid);
  }
  return folds;
}

double fold_risk(const FoldData& f, FamilyKind family, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = f.valid_design.multiply(beta);
  double s = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    s += validation_loss(family, f.y_valid(i), f.w_valid(i), eta(i));
  return s / static_cast<double>(eta.size());
}

void summarise(CVRow& row) {
  const auto V = static_cast<double>(row.fold_risks.size());
  row.risk = std::accumulate(row.fold_risks.begin(), row.fold_risks.end(), 0.0) / V;
  double ss = 0.0;
  for (double r : row.fold_risks) ss += (r - row.risk) * (r - row.risk);
  row.se = V > 1 ? std::sqrt(ss / (V - 1.0)) / std::sqrt(V) : 0.0;
}

// Relaxed refits along a path, reusing the refit whenever the support repeats.
class RelaxCache {
 public:
  explicit RelaxCache(const Problem& prob) : prob_(prob) {}
  const Eigen::VectorXd& get(const Eigen::VectorXd& beta) {
    std::vector<std::size_t> s;
    for (Eigen::Index j = 0; j < beta.size(); ++j)
      if (beta(j) != 0.0) s.push_back(static_cast<std::size_t>(j));
    auto it = cache_.find(s);
    if (it == cache_.end()) it = cache_.emplace(s, relax_refit(prob_, s).beta).first;
    return it->second;
  }

 private:
  const Problem& prob_;
  std::map<std::vector<std::size_t>, Eigen::VectorXd> cache_;
};

}  // namespace

CVReport cv_select(const CVInput& data, const std::vector<Candidate>& candidates, int V,
                   std::uint64_t seed, FitKind estimator, const DictionaryOptions& opt) {
  if (data.cov == nullptr) throw InputError("cross-validation needs covariates");
  if (candidates.empty()) throw InputError("no tuning candidates supplied");
  const auto n = static_cast<std::size_t>(data.y.size());
  CVReport rep;
  rep.folds = V;
  rep.seed = seed;
  rep.estimator = estimator;
  rep.fold_of = make_folds(n, V, seed);
  rep.candidates = candidates;

  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const auto& cand = candidates[c];
    try {
      const CandidateDesign cd = build_candidate(*data.cov, cand, opt);
      const Problem full{&cd.design, data.y, data.w, data.family, cd.penalized};
      full.validate();
      auto folds = split_folds(cd.design, data, rep.fold_of, V);
      std::vector<CVRow> rows;

      if (estimator == FitKind::sieve) {
        std::vector<std::size_t> all(static_cast<std::size_t>(cd.design.cols()));
        std::iota(all.begin(), all.end(), 0);
        CVRow row;
        row.candidate = c;
        row.fold_risks.assign(static_cast<std::size_t>(V), 0.0);
        parallel_for(static_cast<std::size_t>(V), [&](std::size_t v) {
          const auto& f = folds[v];
          const Problem prob{&f.train_design, f.y_train, f.w_train, data.family, cd.penalized};
          row.fold_risks[v] = fold_risk(f, data.family, relax_refit(prob, all).beta);
        });
        row.C = relax_refit(full, all).l1_norm;
        summarise(row);
        rows.push_back(std::move(row));
      } else if (!cand.c_values.empty()) {
        const auto m = cand.c_values.size();
        std::vector<std::vector<double>> risks(m, std::vector<double>(static_cast<std::size_t>(V)));
        parallel_for(static_cast<std::size_t>(V), [&](std::size_t v) {
          const auto& f = folds[v];
          const Problem prob{&f.train_design, f.y_train, f.w_train, data.family, cd.penalized};
          PathSolver solver(prob);
          RelaxCache relax(prob);
          for (std::size_t t = 0; t < m; ++t) {
            const Fit fit = solver.constrained(cand.c_values[t]);
            const Eigen::VectorXd& beta = estimator == FitKind::relax ? relax.get(fit.beta) : fit.beta;
            risks[t][v] = fold_risk(f, data.family, beta);
          }
        });
        for (std::size_t t = 0; t < m; ++t) {
          CVRow row;
          row.candidate = c;
          row.C = cand.c_values[t];
          row.fold_risks = risks[t];
          summarise(row);
          rows.push_back(std::move(row));
        }
      } else {
        const auto grid = candidate_lambda_grid(cd, data, opt);
        PathSolver full_solver(full);
        full_solver.set_grid(grid);
        const auto& full_path = full_solver.path();
        const std::size_t m = full_path.size();
        std::vector<std::vector<double>> risks(m, std::vector<double>(static_cast<std::size_t>(V)));
        parallel_for(static_cast<std::size_t>(V), [&](std::size_t v) {
          const auto& f = folds[v];
          const Problem prob{&f.train_design, f.y_train, f.w_train, data.family, cd.penalized};
          const auto path = fit_path(prob, std::vector<double>(grid.begin(), grid.begin() + static_cast<std::ptrdiff_t>(m)));
          RelaxCache relax(prob);
          for (std::size_t t = 0; t < m; ++t) {
            // Early-stopped binomial paths carry their last solution forward.
            const auto& pt = path[std::min(t, path.size() - 1)];
            const Eigen::VectorXd& beta = estimator == FitKind::relax ? relax.get(pt.beta) : pt.beta;
            risks[t][v] = fold_risk(f, data.family, beta);
          }
        });
        for (std::size_t t = 0; t < m; ++t) {
          CVRow row;
          row.candidate = c;
          row.lambda_index = t;
          row.lambda = full_path[t].lambda;
          row.C = full_path[t].l1_norm;
          row.fold_risks = risks[t];
          summarise(row);
          rows.push_back(std::move(row));
        }
      }
      for (auto& r : rows) {
        if (!std::isfinite(r.risk)) throw NumericError("non-finite validation risk");
        rep.table.push_back(std::move(r));
      }
    } catch (const std::exception& e) {
      rep.failures.emplace_back(c, e.what());
    }
  }
  if (rep.table.empty()) {
    std::string why = "every tuning candidate failed";
    if (!rep.failures.empty()) why += ": " + rep.failures.front().second;
    throw NumericError(why);
  }

  auto better = [&](const CVRow& a, const CVRow& b) {
    const double scale = std::max({1.0, std::abs(a.risk), std::abs(b.risk)});
    if (std::abs(a.risk - b.risk) > 1e-12 * scale) return a.risk < b.risk;
    if (a.C != b.C) return a.C < b.C;
    const auto& ca = rep.candidates[a.candidate];
    const auto& cb = rep.candidates[b.candidate];
    if (ca.k != cb.k) return ca.k < cb.k;
    const auto ja = ca.j_max == 0 ? n : ca.j_max;
    const auto jb = cb.j_max == 0 ? n : cb.j_max;
    return ja < jb;
  };
  rep.chosen = 0;
  for (std::size_t t = 1; t < rep.table.size(); ++t)
    if (better(rep.table[t], rep.table[rep.chosen])) rep.chosen = t;
  return rep;
}

double relax_selector_c_cv_of_hal(const CVInput& data, const Candidate& cand, int V,
                                  std::uint64_t seed, const DictionaryOptions& opt) {
  return cv_select(data, {cand}, V, seed, FitKind::hal, opt).best().C;
}

LepskiResult lepski_rule(const std::vector<double>& C, const std::vector<Eigen::VectorXd>& Q,
                         const std::vector<Eigen::VectorXd>& se, double constant) {
  if (C.empty()) throw InputError("Lepski rule needs at least one C value");
  if (Q.size() != C.size() || se.size() != C.size())
    throw InputError("Lepski rule: C, estimate and se sequences differ in length");
  for (std::size_t t = 1; t < C.size(); ++t)
    if (!(C[t] > C[t - 1])) throw InputError("Lepski rule needs strictly increasing C values");
  LepskiResult r;
  r.C = C;
  for (std::size_t j = 0; j + 1 < C.size(); ++j) {
    if (Q[j].size() != Q[j + 1].size() || se[j].size() != Q[j].size())
      throw InputError("Lepski rule: grid sizes differ between C values");
    const Eigen::ArrayXd dq = (Q[j + 1] - Q[j]).array().abs();
    const Eigen::ArrayXd ds = (se[j + 1] - se[j]).array().abs();
    r.statistic.push_back((dq - constant * ds).maxCoeff());
  }
  for (std::size_t j = 0; j < r.statistic.size(); ++j) {
    if (r.statistic[j] <= 0.0) {
      r.chosen = j;
      r.chosen_C = C[j];
      return r;
    }
  }
  r.chosen = C.size() - 1;
  r.chosen_C = C.back();
  r.never_satisfied = C.size() > 1;
  return r;
}

LepskiResult lepski_undersmooth(const std::vector<double>& C_grid, const LepskiEval& eval,
                                double constant) {
  std::vector<double> kept;
  std::vector<Eigen::VectorXd> Q, se;
  std::vector<std::pair<double, std::string>> skipped;
  for (double c : C_grid) {
    try {
      auto [q, s] = eval(c);
      if (!q.allFinite() || !s.allFinite()) throw NumericError("non-finite estimate or se");
      kept.push_back(c);
      Q.push_back(std::move(q));
      se.push_back(std::move(s));
    } catch (const std::exception& e) {
      skipped.emplace_back(c, e.what());
    }
  }
  if (kept.empty()) throw NumericError("Lepski undersmoothing: every C value failed");
  LepskiResult r = lepski_rule(kept, Q, se, constant);
  r.skipped = std::move(skipped);
  return r;
}

std::vector<double> lepski_grid(double c_cv, double ratio, int steps) {
  if (!(c_cv > 0.0) || !std::isfinite(c_cv)) throw InputError("Lepski grid needs C_cv > 0");
  if (!(ratio > 1.0)) throw InputError("Lepski grid ratio must exceed 1");
  if (steps < 0) throw InputError("Lepski grid needs steps >= 0");
  std::vector<double> g;
  for (int t = 0; t <= steps; ++t) g.push_back(c_cv * std::pow(ratio, t));
  return g;
}

}  // namespace halk
