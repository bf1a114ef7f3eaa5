#pragma once

// Reference computations used by the tests. Everything here is written
// independently of the library: brute force, quadrature or textbook dense
// linear algebra.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

namespace oracle {

// Every nested (k+1)-tuple of coordinate bitmasks s_1 ⊇ ... ⊇ s_{k+1}, reported
// as per-coordinate membership counts and sorted lexicographically.
inline std::vector<std::vector<int>> brute_force_chains(int d, int k) {
  const int subsets = 1 << d;
  std::vector<std::vector<int>> out;
  std::vector<int> tuple(static_cast<std::size_t>(k + 1), 0);
  std::function<void(int)> rec = [&](int j) {
    if (j == k + 1) {
      std::vector<int> depth(static_cast<std::size_t>(d), 0);
      for (int s : tuple)
        for (int l = 0; l < d; ++l)
          if (s >> l & 1) ++depth[static_cast<std::size_t>(l)];
      out.push_back(depth);
      return;
    }
    for (int s = 0; s < subsets; ++s) {
      if (j > 0 && (s & ~tuple[static_cast<std::size_t>(j - 1)])) continue;  // not nested
      tuple[static_cast<std::size_t>(j)] = s;
      rec(j + 1);
    }
  };
  rec(0);
  std::sort(out.begin(), out.end());
  return out;
}

// k-fold iterated primitive mu^k(f)(x) = int_0^x mu^{k-1}(f), by cumulative
// midpoint sums on `grid` cells per axis. Only m = 1 or 2 coordinates.
inline double iterated_primitive(const std::function<double(const std::vector<double>&)>& f,
                                 int k, const std::vector<double>& x, int grid) {
  const std::size_t m = x.size();
  if (m == 0 || m > 2) throw std::invalid_argument("iterated_primitive: m must be 1 or 2");
  if (grid < 64) throw std::invalid_argument("iterated_primitive: grid must be >= 64");
  const int N = grid;
  if (k == 0) return f(x);
  if (m == 1) {
    const double h = x[0] / N;
    std::vector<double> g(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) g[static_cast<std::size_t>(i)] = f({(i + 0.5) * h});
    // g holds mu^j(f) at cell midpoints; integrate k - 1 more times there and
    // the last time up to x.
    for (int j = 1; j < k; ++j) {
      std::vector<double> next(g.size());
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        next[i] = acc + 0.5 * h * g[i];
        acc += h * g[i];
      }
      g.swap(next);
    }
    double total = 0.0;
    for (double v : g) total += h * v;
    return total;
  }
  const double h0 = x[0] / N, h1 = x[1] / N;
  Eigen::MatrixXd g(N, N);
  for (int i = 0; i < N; ++i)
    for (int l = 0; l < N; ++l) g(i, l) = f({(i + 0.5) * h0, (l + 0.5) * h1});
  for (int j = 1; j < k; ++j) {
    // Integral over [0, t1] x [0, t2] evaluated at midpoints: full cells
    // below and left, halves on the shared row/column, a quarter of its own.
    Eigen::MatrixXd cum = Eigen::MatrixXd::Zero(N + 1, N + 1);
    for (int i = 0; i < N; ++i)
      for (int l = 0; l < N; ++l)
        cum(i + 1, l + 1) = cum(i, l + 1) + cum(i + 1, l) - cum(i, l) + g(i, l) * h0 * h1;
    Eigen::MatrixXd next(N, N);
    for (int i = 0; i < N; ++i)
      for (int l = 0; l < N; ++l)
        next(i, l) = 0.25 * (cum(i, l) + cum(i + 1, l) + cum(i, l + 1) + cum(i + 1, l + 1));
    g.swap(next);
  }
  return g.sum() * h0 * h1;
}

// Weighted least squares by Householder QR on sqrt(w) X.
inline Eigen::VectorXd least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& w) {
  const Eigen::VectorXd sw = w.array().sqrt();
  const Eigen::MatrixXd A = sw.asDiagonal() * X;
  const Eigen::VectorXd b = sw.cwiseProduct(y);
  return A.colPivHouseholderQr().solve(b);
}

inline double expit(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// Gradient of (1/n) sum w l(y, X beta): half squared error or logistic loss.
inline Eigen::VectorXd loss_gradient(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& w, const Eigen::VectorXd& beta,
                                     bool binomial) {
  Eigen::VectorXd mu = X * beta;
  if (binomial)
    for (Eigen::Index i = 0; i < mu.size(); ++i) mu(i) = expit(mu(i));
  const Eigen::VectorXd r = w.cwiseProduct(y - mu);
  return -(X.transpose() * r) / static_cast<double>(X.rows());
}

// Largest violation of the lasso optimality conditions at lambda.
inline double kkt_residual(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& w, const Eigen::VectorXd& beta,
                           const std::vector<bool>& penalized, double lambda, bool binomial) {
  const Eigen::VectorXd g = loss_gradient(X, y, w, beta, binomial);
  double worst = 0.0;
  for (Eigen::Index j = 0; j < g.size(); ++j) {
    double v;
    if (!penalized[static_cast<std::size_t>(j)])
      v = std::abs(g(j));
    else if (beta(j) == 0.0)
      v = std::max(0.0, std::abs(g(j)) - lambda);
    else
      v = std::abs(g(j) + lambda * (beta(j) > 0 ? 1.0 : -1.0));
    worst = std::max(worst, v);
  }
  return worst;
}

// Standard normal CDF and its inverse (bisection on erfc).
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
inline double normal_quantile(double p) {
  double lo = -40.0, hi = 40.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Quantile of max_m |Z_m| for independent standard normals, by simulation.
inline double independent_max_quantile(int m, double level, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::vector<double> mx(static_cast<std::size_t>(samples));
  for (auto& v : mx) {
    double best = 0.0;
    for (int t = 0; t < m; ++t) best = std::max(best, std::abs(z(rng)));
    v = best;
  }
  std::sort(mx.begin(), mx.end());
  return mx[static_cast<std::size_t>(std::ceil(level * samples)) - 1];
}

// Classical Gram-Schmidt of two columns in the inner product (1/n) sum w a b.
// Returns T with [q1 q2] = [a b] T.
inline Eigen::Matrix2d gram_schmidt2(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                                     const Eigen::VectorXd& w) {
  const double n = static_cast<double>(a.size());
  auto ip = [&](const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    return (w.array() * u.array() * v.array()).sum() / n;
  };
  const double na = std::sqrt(ip(a, a));
  const Eigen::VectorXd q1 = a / na;
  const double c = ip(b, q1);
  const Eigen::VectorXd r = b - c * q1;
  const double nr = std::sqrt(ip(r, r));
  Eigen::Matrix2d T;
  T << 1.0 / na, -c / (na * nr), 0.0, 1.0 / nr;
  return T;
}

// Least-squares slope of y on x.
inline double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

}  // namespace oracle
