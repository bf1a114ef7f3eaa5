#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "core/error.hpp"
#include "core/selector.hpp"
#include "core/sim.hpp"
#include "doctest.h"

using namespace halk;

namespace {

ScaledCovariates covariates(const Eigen::MatrixXd& X) {
  ScaledCovariates c;
  c.X = X;
  c.B = Eigen::MatrixXd(X.rows(), 0);
  return c;
}

}  // namespace

TEST_CASE("folds are balanced, complete and reproducible") {
  for (std::size_t n : {10, 37, 100}) {
    for (int V : {2, 5, 10}) {
      const auto f = make_folds(n, V, 42);
      REQUIRE(f.size() == n);
      std::vector<int> count(static_cast<std::size_t>(V), 0);
      for (int v : f) {
        REQUIRE(v >= 0);
        REQUIRE(v < V);
        ++count[static_cast<std::size_t>(v)];
      }
      const auto [lo, hi] = std::minmax_element(count.begin(), count.end());
      CHECK(*hi - *lo <= 1);
      CHECK(make_folds(n, V, 42) == f);
    }
  }
  CHECK(make_folds(50, 5, 1) != make_folds(50, 5, 2));
  CHECK_THROWS_AS(make_folds(10, 1, 0), InputError);
}

TEST_CASE("leave-one-out risk of the intercept model") {
  const int n = 5;
  Eigen::MatrixXd X(n, 1);
  X << 0.1, 0.3, 0.5, 0.7, 0.9;
  const Eigen::VectorXd y = (Eigen::VectorXd(n) << 1.0, 2.5, 0.5, 3.0, 1.5).finished();
  const auto cov = covariates(X);
  CVInput in{&cov, y, Eigen::VectorXd::Ones(n), FamilyKind::gaussian};
  Candidate c;
  c.k = 0;
  c.c_values = {0.0};
  const auto rep = cv_select(in, {c}, n, 3, FitKind::hal);
  REQUIRE(rep.table.size() == 1);
  // Held-out residual of the mean model: n/(n-1) (y_i - ybar).
  const double ybar = y.mean();
  double loo = 0.0;
  for (int i = 0; i < n; ++i) loo += std::pow(n / (n - 1.0) * (y(i) - ybar), 2) / n;
  CHECK(rep.best().risk == doctest::Approx(loo).epsilon(1e-12));
  CHECK(rep.chosen == 0);
}

TEST_CASE("noiseless truth prefers the nonzero bound") {
  const int n = 60;
  Eigen::MatrixXd X(n, 1);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = (i + 1.0) / n;
    y(i) = 2.0 * std::max(0.0, X(i, 0) - 0.5);
  }
  const auto cov = covariates(X);
  CVInput in{&cov, y, Eigen::VectorXd::Ones(n), FamilyKind::gaussian};
  Candidate c;
  c.k = 1;
  c.c_values = {0.0, 2.0};
  const auto rep = cv_select(in, {c}, 5, 1, FitKind::hal);
  REQUIRE(rep.table.size() == 2);
  CHECK(rep.best().C > 0.0);
  // The chosen row is the exact minimiser of the table.
  for (const auto& row : rep.table) CHECK(rep.best().risk <= row.risk);
}

TEST_CASE("cv over structural candidates is reproducible and picks the argmin") {
  DGPSpec spec;
  spec.sigma = 0.3;
  const auto data = generate(spec, 150, 0);
  const auto cov = covariates(data.X);
  CVInput in{&cov, data.y, Eigen::VectorXd::Ones(150), FamilyKind::gaussian};
  std::vector<Candidate> cands;
  for (int k : {0, 1})
    for (std::size_t J : {5, 20}) cands.push_back(Candidate{k, SubmodelRestriction::full(), J, {}});
  const auto a = cv_select(in, cands, 5, 9, FitKind::hal);
  const auto b = cv_select(in, cands, 5, 9, FitKind::hal);
  REQUIRE(a.table.size() == b.table.size());
  for (std::size_t t = 0; t < a.table.size(); ++t) CHECK(a.table[t].risk == b.table[t].risk);
  CHECK(a.chosen == b.chosen);
  CHECK(a.fold_of == make_folds(150, 5, 9));
  double best = 1e300;
  for (const auto& row : a.table) best = std::min(best, row.risk);
  CHECK(a.best().risk == best);
  for (const auto& row : a.table) {
    CHECK(row.fold_risks.size() == 5);
    CHECK(row.se >= 0.0);
  }
}

TEST_CASE("ties go to the smaller bound, then order, then knot cap") {
  // A constant response gives identical risks for every candidate.
  const int n = 20;
  Eigen::MatrixXd X(n, 1);
  for (int i = 0; i < n; ++i) X(i, 0) = (i + 1.0) / n;
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(n, 3.0);
  const auto cov = covariates(X);
  CVInput in{&cov, y, Eigen::VectorXd::Ones(n), FamilyKind::gaussian};
  std::vector<Candidate> cands{{1, SubmodelRestriction::full(), 10, {0.5, 0.0}},
                              {0, SubmodelRestriction::full(), 10, {0.0}},
                              {0, SubmodelRestriction::full(), 4, {0.0}}};
  const auto rep = cv_select(in, cands, 4, 1, FitKind::hal);
  const auto& best = rep.best();
  CHECK(best.C == 0.0);
  CHECK(rep.candidates[best.candidate].k == 0);
  CHECK(rep.candidates[best.candidate].j_max == 4);
}

TEST_CASE("a candidate that fails is excluded with a reason") {
  Eigen::MatrixXd X(12, 3);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(0, 1);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = U(rng);
  const auto cov = covariates(X);
  Eigen::VectorXd y(12);
  for (int i = 0; i < 12; ++i) y(i) = U(rng);
  CVInput in{&cov, y, Eigen::VectorXd::Ones(12), FamilyKind::gaussian};
  DictionaryOptions opt;
  opt.chain_cap = 100;  // 3 * 4^3 = 192 chains for k = 2
  std::vector<Candidate> cands{{0, SubmodelRestriction::full(), 5, {}},
                               {2, SubmodelRestriction::full(), 5, {}}};
  const auto rep = cv_select(in, cands, 3, 1, FitKind::hal, opt);
  REQUIRE(rep.failures.size() == 1);
  CHECK(rep.failures[0].first == 1);
  CHECK_FALSE(rep.failures[0].second.empty());
  CHECK(rep.candidates[rep.best().candidate].k == 0);
}

TEST_CASE("Lepski rule") {
  const std::vector<double> C{1, 2, 3, 4, 5, 6};
  // Constant estimates stop immediately.
  std::vector<Eigen::VectorXd> Q(6, Eigen::VectorXd::Constant(3, 1.0)), se;
  for (int j = 0; j < 6; ++j) se.push_back(Eigen::VectorXd::Constant(3, 0.1 * (j + 1)));
  auto r = lepski_rule(C, Q, se);
  CHECK(r.chosen == 0);
  CHECK(r.chosen_C == 1.0);
  CHECK_FALSE(r.never_satisfied);

  // |dQ| halves while dse stays 0.1: first j with 0.5^j <= 0.196 is 3.
  Q.clear();
  double acc = 0.0;
  for (int j = 0; j < 6; ++j) {
    Q.push_back(Eigen::VectorXd::Constant(3, acc));
    acc += std::pow(0.5, j);
  }
  r = lepski_rule(C, Q, se);
  std::size_t expected = 0;
  while (std::pow(0.5, static_cast<double>(expected)) > 1.96 * 0.1) ++expected;
  CHECK(r.chosen == expected);
  CHECK(r.chosen_C == C[expected]);
  // Statistics are max over points of |dQ| - c |dse|.
  for (std::size_t j = 0; j + 1 < C.size(); ++j)
    CHECK(r.statistic[j] == doctest::Approx(std::pow(0.5, static_cast<double>(j)) - 0.196));
  // The trigger is the first index where it holds.
  for (std::size_t j = 0; j < r.chosen; ++j) CHECK(r.statistic[j] > 0.0);

  // Never plateauing: last C and a flag.
  Q.clear();
  for (int j = 0; j < 6; ++j) Q.push_back(Eigen::VectorXd::Constant(3, 10.0 * j));
  r = lepski_rule(C, Q, se);
  CHECK(r.never_satisfied);
  CHECK(r.chosen_C == 6.0);

  // The constant is a parameter.
  r = lepski_rule(C, Q, se, 1000.0);
  CHECK(r.chosen == 0);
}

TEST_CASE("Lepski undersmoothing skips failing evaluations") {
  const std::vector<double> grid = lepski_grid(2.0, 1.25, 4);
  REQUIRE(grid.size() == 5);
  CHECK(grid[0] == 2.0);
  CHECK(grid[4] == doctest::Approx(2.0 * std::pow(1.25, 4)));
  const auto r = lepski_undersmooth(grid, [&](double C) {
    if (C == grid[1]) throw NumericError("singular");
    return std::make_pair(Eigen::VectorXd::Constant(2, 1.0), Eigen::VectorXd::Constant(2, C));
  });
  REQUIRE(r.skipped.size() == 1);
  CHECK(r.skipped[0].first == grid[1]);
  CHECK(r.C.size() == 4);
  CHECK(r.chosen_C == grid[0]);
}

TEST_CASE("the HAL cross-validated bound for relaxed fits") {
  DGPSpec spec;
  spec.sigma = 0.5;
  const auto data = generate(spec, 200, 3);
  const auto cov = covariates(data.X);
  CVInput in{&cov, data.y, Eigen::VectorXd::Ones(200), FamilyKind::gaussian};
  Candidate c{1, SubmodelRestriction::full(), 20, {}};
  const double C = relax_selector_c_cv_of_hal(in, c, 5, 4);
  const auto hal = cv_select(in, {c}, 5, 4, FitKind::hal);
  CHECK(C == hal.best().C);

  Candidate single = c;
  single.c_values = {1.5};
  CHECK(relax_selector_c_cv_of_hal(in, single, 5, 4) == 1.5);
}

TEST_CASE("the HAL bound exceeds the relaxed fit's own choice in most replicates") {
  DGPSpec spec;
  spec.sigma = 0.5;
  spec.seed = 77;
  int larger = 0;
  const int reps = 50;
  for (int r = 0; r < reps; ++r) {
    const auto data = generate(spec, 200, static_cast<std::uint64_t>(r));
    const auto cov = covariates(data.X);
    CVInput in{&cov, data.y, Eigen::VectorXd::Ones(200), FamilyKind::gaussian};
    Candidate c{1, SubmodelRestriction::full(), 20, {}};
    const double hal_C = relax_selector_c_cv_of_hal(in, c, 5, static_cast<std::uint64_t>(r));
    const double relax_C = cv_select(in, {c}, 5, static_cast<std::uint64_t>(r), FitKind::relax).best().C;
    larger += hal_C >= relax_C;
  }
  CHECK(larger >= 0.8 * reps);
}
