#include <random>
#include <vector>

#include "core/design.hpp"
#include "core/error.hpp"
#include "doctest.h"

using namespace halk;

TEST_CASE("min-max rescaling") {
  Eigen::MatrixXd raw(3, 2);
  raw << 2, 0, 4, 1, 6, 1;
  const auto map = fit_rescale(raw, {false, true}, {"a", "b"});
  CHECK(map.continuous_count() == 1);
  CHECK(map.binary_count() == 1);
  const auto cov = apply_rescale(map, raw);
  CHECK(cov.X(0, 0) == 0.0);
  CHECK(cov.X(1, 0) == 0.5);
  CHECK(cov.X(2, 0) == 1.0);
  CHECK(cov.B.col(0) == raw.col(1));
  CHECK(cov.clipped == 0);
  CHECK(invert_rescale(map, cov.X).isApprox(raw.col(0)));

  Eigen::MatrixXd out(1, 2);
  out << 7, 1;
  const auto c2 = apply_rescale(map, out);
  CHECK(c2.X(0, 0) == 1.0);
  CHECK(c2.clipped == 1);
}

TEST_CASE("rescaling input errors name the column") {
  Eigen::MatrixXd raw(3, 2);
  raw << 1, 0, 1, 1, 1, 0;
  try {
    fit_rescale(raw, {false, true}, {"flat", "b"});
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("flat") != std::string::npos);
  }
  raw << 1, 0, 2, 2, 3, 0;
  CHECK_THROWS_AS(fit_rescale(raw, {false, true}, {"x", "b"}), InputError);
  CHECK_THROWS_AS(fit_rescale(Eigen::MatrixXd::Ones(1, 1), {false}), InputError);
}

TEST_CASE("binary expansion") {
  Eigen::MatrixXd X(4, 1);
  X << 0.2, 0.4, 0.6, 1.0;
  const auto dict = build_dictionary(X, 1, SubmodelRestriction::full(), 4);

  CHECK(binary_expand(dict, Eigen::MatrixXd(4, 0)).terms == dict.terms);

  Eigen::MatrixXd B(4, 1);
  B << 0, 1, 0, 1;
  const auto two = binary_expand(dict, B);
  CHECK(two.size() == 2 * dict.size());
  CHECK(two.terms[0].binary_mask == 0);

  const auto zero = binary_expand(dict, Eigen::MatrixXd::Zero(4, 1));
  CHECK(zero.size() == dict.size());

  Eigen::MatrixXd bad(4, 1);
  bad << 0, 2, 0, 1;
  CHECK_THROWS_AS(binary_expand(dict, bad), InputError);

  // Two binary columns, observed patterns (1,0) and (0,1): masks 0, 01, 10.
  Eigen::MatrixXd B2(4, 2);
  B2 << 1, 0, 0, 1, 1, 0, 0, 1;
  CHECK(binary_expand(dict, B2).size() == 3 * dict.size());
}

TEST_CASE("assembled columns") {
  Eigen::MatrixXd X(2, 1);
  X << 0.25, 0.75;
  BasisDictionary dict;
  dict.k = 0;
  dict.d = 1;
  dict.terms.push_back({BasisIndex{SubsetChain::from_subsets({{}}, 1), {}}, 0});
  dict.terms.push_back({BasisIndex{SubsetChain::from_subsets({{0}}, 1), {0.5}}, 0});
  const auto D = assemble(dict, X, Eigen::MatrixXd(2, 0));
  CHECK(D.column(0) == Eigen::Vector2d(1, 1));
  CHECK(D.column(1) == Eigen::Vector2d(0, 1));

  BasisDictionary d1;
  d1.k = 1;
  d1.d = 1;
  d1.terms.push_back({BasisIndex{SubsetChain::from_subsets({{0}, {0}}, 1), {0.5}}, 0});
  CHECK(assemble(d1, X, Eigen::MatrixXd(2, 0)).column(0) == Eigen::Vector2d(0, 0.25));

  CHECK_THROWS_AS(assemble(d1, Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd(2, 0)), InputError);
}

TEST_CASE("assembled entries equal direct basis evaluation") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> U(0, 1);
  const int n = 80;
  Eigen::MatrixXd X(n, 2), B(n, 1);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = U(rng);
    X(i, 1) = U(rng);
    B(i, 0) = U(rng) < 0.5 ? 0.0 : 1.0;
  }
  for (int k = 0; k <= 2; ++k) {
    const auto dict = binary_expand(build_dictionary(X, k, SubmodelRestriction::full(), 15), B);
    const auto D = assemble(dict, X, B);
    REQUIRE(D.cols() == static_cast<Eigen::Index>(dict.size()));
    std::uniform_int_distribution<Eigen::Index> row(0, n - 1), col(0, D.cols() - 1);
    for (int t = 0; t < 100; ++t) {
      const auto i = row(rng), j = col(rng);
      const std::vector<double> x{X(i, 0), X(i, 1)}, b{B(i, 0)};
      CHECK(D.value(i, j) == eval_term(dict.terms[static_cast<std::size_t>(j)], x, b));
    }
    const auto dense = D.dense();
    CHECK(dense.minCoeff() >= 0.0);
    CHECK(dense.maxCoeff() <= 1.0);
    if (k == 0) CHECK((dense.array() * (1.0 - dense.array())).abs().maxCoeff() == 0.0);
  }
}

TEST_CASE("sparse and dense column storage agree") {
  DesignMatrix D(5);
  Eigen::VectorXd sparse(5), dense(5);
  sparse << 0, 0, 0, 0, 2;
  dense << 1, 2, 3, 4, 5;
  D.push_column(sparse);
  D.push_column(dense);
  CHECK(D.is_sparse(0));
  CHECK_FALSE(D.is_sparse(1));
  Eigen::VectorXd v(5), w(5);
  v << 1, -1, 2, 0.5, 3;
  w << 1, 2, 1, 2, 1;
  const Eigen::MatrixXd M = D.dense();
  CHECK(D.dot(0, v) == doctest::Approx(M.col(0).dot(v)));
  CHECK(D.dot(1, v) == doctest::Approx(M.col(1).dot(v)));
  CHECK(D.weighted_sq_norm(1, w) == doctest::Approx((w.array() * M.col(1).array().square()).sum()));
  CHECK(D.transpose_multiply(v).isApprox(M.transpose() * v));
  CHECK(D.multiply(Eigen::Vector2d(2, -1)).isApprox(M * Eigen::Vector2d(2, -1)));
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(5);
  D.axpy(0, 3.0, acc);
  D.axpy_weighted(1, 1.0, w, acc);
  CHECK(acc.isApprox(3.0 * M.col(0) + w.cwiseProduct(M.col(1))));
  const auto sub = D.select_rows({4, 0});
  CHECK(sub.dense() == (Eigen::MatrixXd(2, 2) << 2, 5, 0, 1).finished());
}
