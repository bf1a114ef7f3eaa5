#include <cmath>
#include <random>
#include <vector>

#include "core/error.hpp"
#include "core/inference.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace halk;

namespace {

DesignMatrix from_dense(const Eigen::MatrixXd& M) {
  DesignMatrix D(M.rows());
  for (Eigen::Index j = 0; j < M.cols(); ++j) D.push_column(M.col(j));
  return D;
}

Eigen::MatrixXd columns(const Eigen::MatrixXd& M, const std::vector<std::size_t>& cols) {
  Eigen::MatrixXd out(M.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t t = 0; t < cols.size(); ++t)
    out.col(static_cast<Eigen::Index>(t)) = M.col(static_cast<Eigen::Index>(cols[t]));
  return out;
}

// Intercept plus p-1 first-order hinges at equally spaced knots on x.
Eigen::MatrixXd hinge_design(const Eigen::VectorXd& x, int p) {
  Eigen::MatrixXd M(x.size(), p);
  M.col(0).setOnes();
  for (int j = 1; j < p; ++j) {
    const double u = (j - 1.0) / (p - 1.0);
    M.col(j) = (x.array() - u).max(0.0);
  }
  return M;
}

struct Fitted {
  Eigen::MatrixXd M;
  DesignMatrix D;
  InferenceContext ctx;
};

Fitted relaxed_fit(int n, int p, bool binomial, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0, 1);
  std::normal_distribution<double> Z;
  Eigen::VectorXd x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x(i) = U(rng);
    const double f = std::sin(3 * x(i));
    y(i) = binomial ? (U(rng) < oracle::expit(f) ? 1.0 : 0.0) : f + 0.4 * Z(rng);
  }
  Fitted out;
  out.M = hinge_design(x, p);
  out.D = from_dense(out.M);
  std::vector<bool> pen(static_cast<std::size_t>(p), true);
  pen[0] = false;
  Problem prob{&out.D, y, Eigen::VectorXd::Ones(n),
               binomial ? FamilyKind::binomial : FamilyKind::gaussian, pen};
  std::vector<std::size_t> all;
  for (int j = 1; j < p; ++j) all.push_back(static_cast<std::size_t>(j));
  const auto fit = relax_refit(prob, all);
  out.ctx = InferenceContext{&out.D, y, prob.w, prob.family, fit.beta, pen};
  return out;
}

Eigen::MatrixXd grid_phi(int p, int m) {
  Eigen::VectorXd g(m);
  for (int i = 0; i < m; ++i) g(i) = (i + 0.5) / m;
  return hinge_design(g, p);
}

}  // namespace

TEST_CASE("orthonormal columns are left alone") {
  Eigen::MatrixXd M(4, 2);
  M << 1, 1, 1, -1, 1, 1, 1, -1;
  const auto D = from_dense(M);
  const auto ob = orthonormalize(D, {0, 1}, Eigen::VectorXd::Ones(4));
  CHECK(ob.d_eff == 2);
  CHECK((ob.A - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("duplicated support column is dropped") {
  Eigen::MatrixXd M(5, 3);
  M << 1, 0.1, 0.1, 1, 0.4, 0.4, 1, 0.2, 0.2, 1, 0.9, 0.9, 1, 0.5, 0.5;
  const auto D = from_dense(M);
  const auto ob = orthonormalize(D, {0, 1, 2}, Eigen::VectorXd::Ones(5));
  CHECK(ob.d_eff == 2);
  CHECK(ob.dropped.size() == 1);
  CHECK(gram_identity_error(ob, D) <= 1e-8);
  CHECK_THROWS_AS(orthonormalize(D, {}, Eigen::VectorXd::Ones(5)), InputError);
}

TEST_CASE("two-column basis matches hand Gram-Schmidt") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> U(0, 1);
  const int n = 30;
  Eigen::MatrixXd M(n, 2);
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) {
    M(i, 0) = 3.0 + U(rng);  // larger norm: first pivot
    M(i, 1) = U(rng);
    w(i) = 0.5 + U(rng);
  }
  const auto D = from_dense(M);
  const auto ob = orthonormalize(D, {0, 1}, w);
  const Eigen::Matrix2d T = oracle::gram_schmidt2(M.col(0), M.col(1), w);
  CHECK((ob.A - T.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("weighted Gram identity") {
  // A logistic fit with many free hinges nearly separates the data; keep it
  // well posed so the weights stay bounded away from zero.
  for (bool binomial : {false, true}) {
    auto f = relaxed_fit(400, binomial ? 8 : 25, binomial, 3);
    const auto ob = orthonormalize(f.D, f.ctx.support(), inference_weights(f.ctx));
    CHECK(gram_identity_error(ob, f.D) <= 1e-8);
  }
}

TEST_CASE("intercept-only model: both variances equal the sample-mean variance") {
  const int n = 40;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> Z;
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y(i) = 2 + Z(rng);
  const auto D = from_dense(Eigen::MatrixXd::Ones(n, 1));
  InferenceContext ctx{&D, y, Eigen::VectorXd::Ones(n), FamilyKind::gaussian,
                       Eigen::VectorXd::Constant(1, y.mean()), {false}};
  const Eigen::MatrixXd phi = Eigen::MatrixXd::Ones(1, 1);
  InferenceRequest req;
  const auto orth = confidence_intervals(ctx, phi, req);
  req.method = VarianceMethod::delta;
  const auto del = confidence_intervals(ctx, phi, req);
  const double target = (y.array() - y.mean()).square().mean() / n;
  CHECK(std::abs(orth.se(0) * orth.se(0) - target) <= 1e-8);
  CHECK(std::abs(del.se(0) * del.se(0) - target) <= 1e-8);
  CHECK(std::abs(orth.se(0) * orth.se(0) - del.se(0) * del.se(0)) <= 1e-8);
}

TEST_CASE("variance vanishes where every basis function is zero") {
  auto f = relaxed_fit(200, 6, false, 2);
  std::vector<std::size_t> hinges{3, 4, 5};
  const auto ob = orthonormalize(f.D, hinges, inference_weights(f.ctx));
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(1, 3);
  CHECK(orthonormal_variance(ob, phi)(0) == 0.0);
}

TEST_CASE("orthonormal and delta variances coincide when residual size is homogeneous") {
  // 20 mass points, 10 observations each, residuals +-0.3 within every point,
  // saturated step basis: the sandwich middle is exactly sigma^2 times the Gram.
  const int m = 20, per = 10, n = m * per;
  Eigen::VectorXd x(n), y(n);
  for (int c = 0; c < m; ++c)
    for (int r = 0; r < per; ++r) {
      const int i = c * per + r;
      x(i) = (c + 1.0) / m;
      y(i) = std::sin(3 * x(i)) + (r % 2 == 0 ? 0.3 : -0.3);
    }
  Eigen::MatrixXd M(n, m);
  M.col(0).setOnes();
  for (int j = 1; j < m; ++j) M.col(j) = (x.array() >= (j + 1.0) / m).cast<double>();
  const auto D = from_dense(M);
  std::vector<bool> pen(static_cast<std::size_t>(m), true);
  pen[0] = false;
  Problem prob{&D, y, Eigen::VectorXd::Ones(n), FamilyKind::gaussian, pen};
  std::vector<std::size_t> all;
  for (int j = 1; j < m; ++j) all.push_back(static_cast<std::size_t>(j));
  const auto fit = relax_refit(prob, all);
  InferenceContext ctx{&D, y, prob.w, prob.family, fit.beta, pen};
  const Eigen::MatrixXd phi = columns(M, ctx.support()).topRows(n);
  InferenceRequest req;
  const auto a = confidence_intervals(ctx, phi, req);
  req.method = VarianceMethod::delta;
  const auto b = confidence_intervals(ctx, phi, req);
  for (Eigen::Index i = 0; i < n; ++i)
    CHECK(std::abs(a.se(i) * a.se(i) - b.se(i) * b.se(i)) <= 1e-6 * b.se(i) * b.se(i));
  // The saturated model's variance is sigma^2 / (count at the point).
  CHECK(a.se(0) * a.se(0) == doctest::Approx(0.09 / per).epsilon(1e-10));
}

TEST_CASE("influence values average to zero for relaxed fits") {
  for (bool binomial : {false, true}) {
    auto f = relaxed_fit(300, 12, binomial, 5);
    const auto support = f.ctx.support();
    const Eigen::MatrixXd phi = columns(grid_phi(12, 15), support);
    const auto di = delta_influence(f.ctx, support, phi);
    CHECK(di.D.colwise().mean().cwiseAbs().maxCoeff() <= 1e-8);
    CHECK_FALSE(di.pinv_fallback);
  }
}

TEST_CASE("pointwise intervals") {
  CHECK(normal_two_sided_quantile(0.95) == doctest::Approx(oracle::normal_quantile(0.975)).epsilon(1e-12));
  const auto r = pointwise_ci(Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 0.1), 0.95);
  CHECK(r.lower(0) == doctest::Approx(0.804).epsilon(1e-4));
  CHECK(r.upper(0) == doctest::Approx(1.196).epsilon(1e-4));
  const auto z = pointwise_ci(Eigen::VectorXd::Constant(1, 2.0), Eigen::VectorXd::Zero(1), 0.95);
  CHECK(z.lower(0) == 2.0);
  CHECK(z.upper(0) == 2.0);
  const auto w99 = pointwise_ci(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1), 0.99);
  const auto w95 = pointwise_ci(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1), 0.95);
  CHECK(w99.upper(0) - w99.lower(0) > w95.upper(0) - w95.lower(0));
  CHECK_THROWS_AS(pointwise_ci(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1), 1.0), InputError);
}

TEST_CASE("max-normal quantiles") {
  const double z = normal_two_sided_quantile(0.95);
  CHECK(std::abs(mvn_max_quantile(Eigen::MatrixXd::Identity(1, 1), 0.95, 1000000, 3) - z) <= 0.01);
  const int m = 10;
  const double sidak = oracle::normal_quantile(0.5 + 0.5 * std::pow(0.95, 1.0 / m));
  const double q = mvn_max_quantile(Eigen::MatrixXd::Identity(m, m), 0.95, 100000, 4);
  CHECK(std::abs(q - sidak) <= 0.02);
  CHECK(std::abs(q - oracle::independent_max_quantile(m, 0.95, 100000, 99)) <= 0.02);
  // Perfect correlation collapses to a single normal.
  CHECK(std::abs(mvn_max_quantile(Eigen::MatrixXd::Ones(m, m), 0.95, 1000000, 5) - z) <= 0.01);
  CHECK(mvn_max_quantile(Eigen::MatrixXd::Identity(3, 3), 0.9, 5000, 7) ==
        mvn_max_quantile(Eigen::MatrixXd::Identity(3, 3), 0.9, 5000, 7));
}

TEST_CASE("influence correlation") {
  Eigen::MatrixXd D(4, 3);
  D << 1, 2, -1, 2, 4, -2, 3, 6, -3, 4, 8, -4.5;
  const auto rho = influence_correlation(D);
  CHECK(rho(0, 1) == doctest::Approx(1.0));
  CHECK(rho(0, 2) < -0.99);
  CHECK(rho.diagonal() == Eigen::Vector3d::Ones());
}

TEST_CASE("simultaneous bands contain the pointwise interval") {
  auto f = relaxed_fit(500, 20, false, 6);
  const auto support = f.ctx.support();
  const Eigen::MatrixXd phi = columns(grid_phi(20, 40), support);
  InferenceRequest req;
  const auto pw = confidence_intervals(f.ctx, phi, req);
  REQUIRE(pw.d_eff == 20);
  req.band = BandKind::log_scaled;
  const auto ls = confidence_intervals(f.ctx, phi, req);
  CHECK(ls.multiplier == doctest::Approx(pw.multiplier * std::log(20.0)).epsilon(1e-15));
  CHECK(std::log(20.0) == doctest::Approx(2.9957).epsilon(1e-4));
  req.band = BandKind::mvn_quantile;
  const auto mv = confidence_intervals(f.ctx, phi, req);
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    CHECK(ls.lower(i) <= pw.lower(i));
    CHECK(ls.upper(i) >= pw.upper(i));
    CHECK(mv.lower(i) <= pw.lower(i));
    CHECK(mv.upper(i) >= pw.upper(i));
    CHECK(pw.lower(i) <= pw.estimate(i));
    CHECK(pw.estimate(i) <= pw.upper(i));
    CHECK(pw.se(i) >= 0.0);
  }
  CHECK(mv.multiplier > pw.multiplier);
}

TEST_CASE("small d_eff warns for the log-scaled band") {
  auto f = relaxed_fit(100, 2, false, 1);
  const auto support = f.ctx.support();
  const Eigen::MatrixXd phi = columns(grid_phi(2, 5), support);
  InferenceRequest req;
  req.band = BandKind::log_scaled;
  const auto r = confidence_intervals(f.ctx, phi, req);
  bool warned = false;
  for (const auto& w : r.warnings) warned |= w.find("d_eff < 3") != std::string::npos;
  CHECK(warned);
}

TEST_CASE("probability-scale intervals for the logistic family") {
  auto f = relaxed_fit(400, 8, true, 4);
  const auto support = f.ctx.support();
  const Eigen::MatrixXd phi = columns(grid_phi(8, 10), support);
  InferenceRequest req;
  const auto lin = confidence_intervals(f.ctx, phi, req);
  req.probability_scale = true;
  const auto prob = confidence_intervals(f.ctx, phi, req);
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    const double p = oracle::expit(lin.estimate(i));
    CHECK(prob.estimate(i) == doctest::Approx(p).epsilon(1e-14));
    CHECK(prob.se(i) == doctest::Approx(lin.se(i) * p * (1 - p)).epsilon(1e-12));
  }
  auto g = relaxed_fit(50, 3, false, 1);
  CHECK_THROWS_AS(confidence_intervals(g.ctx, columns(grid_phi(3, 2), g.ctx.support()), req),
                  InputError);
}

TEST_CASE("score diagnostics") {
  auto f = relaxed_fit(300, 15, false, 9);
  const Eigen::MatrixXd phi = columns(grid_phi(15, 11), f.ctx.support());
  const auto rep = score_diagnostics(f.ctx, {}, phi);
  CHECK(rep.max_score <= 1e-8);
  CHECK(rep.r_tilde.size() == 11);
  CHECK(rep.r_tilde.cwiseAbs().maxCoeff() <= 1e-7);
  CHECK(rep.threshold == doctest::Approx(std::sqrt(static_cast<double>(rep.d_eff) / 300)));

  // Constrained fit: norm-preserving directions have zero derivative.
  std::vector<bool> pen(15, true);
  pen[0] = false;
  Problem prob{&f.D, f.ctx.y, f.ctx.w, FamilyKind::gaussian, pen};
  const auto hal = fit_constrained(prob, 1.0);
  InferenceContext hc{&f.D, f.ctx.y, f.ctx.w, FamilyKind::gaussian, hal.beta, pen};
  const auto hrep = score_diagnostics(hc, {}, Eigen::MatrixXd());
  CHECK(hrep.norm_preserving_score <= 1e-6);

  // Zero residuals: every score is exactly zero.
  InferenceContext exact = f.ctx;
  exact.y = f.D.multiply(exact.beta);
  const auto zrep = score_diagnostics(exact, {}, phi);
  CHECK(zrep.max_score == 0.0);
  CHECK(zrep.r_tilde.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("an exact gaussian fit has zero-width intervals") {
  auto f = relaxed_fit(100, 6, false, 2);
  f.ctx.y = f.D.multiply(f.ctx.beta);
  const Eigen::MatrixXd phi = columns(grid_phi(6, 7), f.ctx.support());
  for (auto method : {VarianceMethod::orthonormal, VarianceMethod::delta}) {
    InferenceRequest req;
    req.method = method;
    req.band = BandKind::mvn_quantile;
    req.mc_samples = 1000;
    const auto r = confidence_intervals(f.ctx, phi, req);
    CHECK(r.se.isZero(0.0));
    CHECK(r.lower == r.estimate);
    CHECK(r.upper == r.estimate);
  }
}
