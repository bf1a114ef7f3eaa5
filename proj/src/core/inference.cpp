#include "core/inference.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <random>

#include "core/error.hpp"
#include "core/ortho.hpp"
#include "core/parallel.hpp"

namespace halk {

std::string to_string(VarianceMethod m) {
  return m == VarianceMethod::delta ? "delta" : "orthonormal";
}

std::string to_string(BandKind b) {
  switch (b) {
    case BandKind::pointwise:
      return "pointwise";
    case BandKind::log_scaled:
      return "log_scaled";
    case BandKind::mvn_quantile:
      return "mvn_quantile";
  }
  return "pointwise";
}

VarianceMethod parse_variance_method(const std::string& tag) {
  if (tag == "orthonormal") return VarianceMethod::orthonormal;
  if (tag == "delta") return VarianceMethod::delta;
  throw InputError("unknown variance method '" + tag + "' (expected orthonormal, delta)");
}

BandKind parse_band_kind(const std::string& tag) {
  if (tag == "pointwise") return BandKind::pointwise;
  if (tag == "log_scaled" || tag == "log-scaled") return BandKind::log_scaled;
  if (tag == "mvn_quantile" || tag == "mvn-quantile") return BandKind::mvn_quantile;
  throw InputError("unknown band '" + tag + "' (expected pointwise, log_scaled, mvn_quantile)");
}

OrthoBasis orthonormalize(const DesignMatrix& design, const std::vector<std::size_t>& support,
                          const Eigen::VectorXd& weights) {
  if (support.empty()) throw InputError("cannot orthonormalise an empty support");
  if (weights.size() != design.rows()) throw InputError("weight length does not match design rows");
  OrthoBasis out;
  out.support = support;
  std::sort(out.support.begin(), out.support.end());
  out.weights = weights;
  const double n = static_cast<double>(design.rows());
  const Eigen::VectorXd scale = (weights.array() / n).sqrt();
  const auto mgs = pivoted_mgs(scale.asDiagonal() * design.dense(out.support));
  if (mgs.retained.empty()) throw InputError("support columns are all zero on the training data");
  out.d_eff = mgs.retained.size();
  out.A = mgs.T.transpose();
  for (auto d : mgs.dropped) out.dropped.push_back(out.support[d]);
  return out;
}

double gram_identity_error(const OrthoBasis& ortho, const DesignMatrix& design) {
  const Eigen::MatrixXd star = design.dense(ortho.support) * ortho.A.transpose();
  const double n = static_cast<double>(design.rows());
  const Eigen::MatrixXd G = star.transpose() * ortho.weights.asDiagonal() * star / n;
  return (G - Eigen::MatrixXd::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff();
}

std::vector<std::size_t> InferenceContext::support() const {
  std::vector<std::size_t> s;
  for (Eigen::Index j = 0; j < beta.size(); ++j)
    if (beta(j) != 0.0) s.push_back(static_cast<std::size_t>(j));
  return s;
}

Eigen::VectorXd InferenceContext::fitted_mean() const {
  return mean_response(family, design->multiply(beta));
}

Eigen::VectorXd inference_weights(const InferenceContext& ctx) {
  const Eigen::VectorXd m = ctx.fitted_mean();
  switch (ctx.family) {
    case FamilyKind::gaussian: {
      const double sigma2 = (ctx.w.array() * (ctx.y - m).array().square()).mean();
      if (!(sigma2 > 0.0))
        throw NumericError("residual variance is zero; orthonormal variance is undefined");
      return ctx.w / sigma2;
    }
    case FamilyKind::weighted_gaussian:
      return ctx.w;
    case FamilyKind::binomial: {
      Eigen::VectorXd v(m.size());
      for (Eigen::Index i = 0; i < m.size(); ++i)
        v(i) = std::max(ctx.w(i) * m(i) * (1.0 - m(i)), 1e-300);
      return v;
    }
  }
  return ctx.w;
}

Eigen::VectorXd orthonormal_variance(const OrthoBasis& ortho, const Eigen::MatrixXd& phi_grid) {
  if (phi_grid.cols() != static_cast<Eigen::Index>(ortho.support.size()))
    throw InputError("grid evaluations do not match the orthonormal basis support");
  const double n = static_cast<double>(ortho.weights.size());
  const Eigen::MatrixXd star = phi_grid * ortho.A.transpose();
  return star.rowwise().squaredNorm() / n;
}

DeltaInfluence delta_influence(const InferenceContext& ctx, const std::vector<std::size_t>& support,
                               const Eigen::MatrixXd& phi_grid) {
  if (phi_grid.cols() != static_cast<Eigen::Index>(support.size()))
    throw InputError("grid evaluations do not match the support");
  const double n = static_cast<double>(ctx.n());
  const Eigen::MatrixXd Phi = ctx.design->dense(support);
  const Eigen::VectorXd m = ctx.fitted_mean();
  Eigen::VectorXd info_w = ctx.w;
  if (ctx.family == FamilyKind::binomial)
    info_w = (ctx.w.array() * m.array() * (1.0 - m.array())).matrix();
  const Eigen::MatrixXd info = Phi.transpose() * info_w.asDiagonal() * Phi / n;

  DeltaInfluence out;
  Eigen::MatrixXd psi;  // I^{-1} phi(x) per grid column
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  bool ok = ldlt.info() == Eigen::Success;
  if (ok) {
    const Eigen::VectorXd d = ldlt.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    ok = dmax > 0.0 && d.minCoeff() > 1e-12 * dmax;
  }
  if (ok) {
    psi = ldlt.solve(phi_grid.transpose());
  } else {
    const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(info);
    psi = cod.pseudoInverse() * phi_grid.transpose();
    out.pinv_fallback = true;
  }
  const Eigen::VectorXd ew = (ctx.w.array() * (ctx.y - m).array()).matrix();
  out.D = ew.asDiagonal() * (Phi * psi);
  out.variance = out.D.colwise().squaredNorm().transpose() / (n * n);
  return out;
}

double normal_two_sided_quantile(double level) {
  if (!(level > 0.0 && level < 1.0)) throw InputError("confidence level must lie in (0,1)");
  const boost::math::normal_distribution<double> z;
  return boost::math::quantile(z, 0.5 + 0.5 * level);
}

Eigen::MatrixXd influence_correlation(const Eigen::MatrixXd& D) {
  const Eigen::Index m = D.cols();
  const Eigen::MatrixXd centered = D.rowwise() - D.colwise().mean();
  Eigen::MatrixXd cov = centered.transpose() * centered;
  Eigen::VectorXd sd = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd rho = Eigen::MatrixXd::Identity(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = 0; b < m; ++b) {
      if (a == b || !(sd(a) > 0.0) || !(sd(b) > 0.0)) continue;
      rho(a, b) = std::clamp(cov(a, b) / (sd(a) * sd(b)), -1.0, 1.0);
    }
  }
  return rho;
}

double mvn_max_quantile(const Eigen::MatrixXd& rho, double level, std::size_t samples,
                        std::uint64_t seed) {
  if (!(level > 0.0 && level < 1.0)) throw InputError("confidence level must lie in (0,1)");
  if (rho.rows() == 0 || rho.rows() != rho.cols()) throw InputError("correlation matrix must be square and nonempty");
  if (samples == 0) throw InputError("need at least one Monte Carlo sample");
  const Eigen::Index m = rho.rows();
  Eigen::MatrixXd R = rho;
  R.diagonal().array() += 1e-8;
  const Eigen::LLT<Eigen::MatrixXd> llt(R);
  if (llt.info() != Eigen::Success) throw NumericError("correlation matrix is not positive definite");
  const Eigen::MatrixXd L = llt.matrixL();

  constexpr std::size_t kBlock = 4096;
  const std::size_t blocks = (samples + kBlock - 1) / kBlock;
  std::vector<double> maxima(samples);
  parallel_for(blocks, [&](std::size_t b) {
    const std::size_t start = b * kBlock;
    const std::size_t count = std::min(kBlock, samples - start);
    std::mt19937_64 rng(mix_seed(seed, b));
    std::normal_distribution<double> normal;
    Eigen::MatrixXd E(m, static_cast<Eigen::Index>(count));
    for (Eigen::Index c = 0; c < E.cols(); ++c)
      for (Eigen::Index r = 0; r < m; ++r) E(r, c) = normal(rng);
    const Eigen::MatrixXd Z = L * E;
    for (Eigen::Index c = 0; c < Z.cols(); ++c)
      maxima[start + static_cast<std::size_t>(c)] = Z.col(c).cwiseAbs().maxCoeff();
  });
  const auto rank = static_cast<std::size_t>(
      std::ceil(level * static_cast<double>(samples))) - 1;
  const auto kth = maxima.begin() + static_cast<std::ptrdiff_t>(std::min(rank, samples - 1));
  std::nth_element(maxima.begin(), kth, maxima.end());
  return *kth;
}

InferenceResult pointwise_ci(const Eigen::VectorXd& estimate, const Eigen::VectorXd& se,
                             double level) {
  if (estimate.size() != se.size()) throw InputError("estimate and se lengths differ");
  InferenceResult r;
  r.level = level;
  r.estimate = estimate;
  r.se = se;
  r.multiplier = normal_two_sided_quantile(level);
  r.lower = estimate - r.multiplier * se;
  r.upper = estimate + r.multiplier * se;
  return r;
}

InferenceResult confidence_intervals(const InferenceContext& ctx, const Eigen::MatrixXd& phi_grid,
                                     const InferenceRequest& req) {
  const auto support = ctx.support();
  if (support.empty()) throw InputError("model has an empty support; no intervals available");
  if (phi_grid.cols() != static_cast<Eigen::Index>(support.size()))
    throw InputError("grid evaluations do not match the model support");
  if (req.probability_scale && ctx.family != FamilyKind::binomial)
    throw InputError("probability scale is only defined for the binomial family");

  Eigen::VectorXd beta_s(static_cast<Eigen::Index>(support.size()));
  for (std::size_t t = 0; t < support.size(); ++t)
    beta_s(static_cast<Eigen::Index>(t)) = ctx.beta(static_cast<Eigen::Index>(support[t]));
  Eigen::VectorXd eta = phi_grid * beta_s;

  // The orthonormal variance scales with the residual variance, so an exact
  // gaussian fit has variance zero; the basis then only supplies d_eff.
  const bool exact =
      ctx.family == FamilyKind::gaussian && (ctx.y - ctx.fitted_mean()).isZero(0.0);
  const OrthoBasis ortho =
      orthonormalize(*ctx.design, support, exact ? ctx.w : inference_weights(ctx));
  std::vector<std::string> warnings;
  Eigen::VectorXd var;
  DeltaInfluence delta;
  const bool need_delta = req.method == VarianceMethod::delta || req.band == BandKind::mvn_quantile;
  if (need_delta) {
    delta = delta_influence(ctx, support, phi_grid);
    if (delta.pinv_fallback)
      warnings.push_back("information matrix singular; used pseudo-inverse");
  }
  var = req.method == VarianceMethod::delta ? delta.variance : orthonormal_variance(ortho, phi_grid);
  if (exact) var.setZero();

  Eigen::VectorXd est = eta;
  if (req.probability_scale) {
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double p = expit(eta(i));
      est(i) = p;
      var(i) *= std::pow(p * (1.0 - p), 2);
    }
  }
  const Eigen::VectorXd se = var.cwiseMax(0.0).cwiseSqrt();
  InferenceResult r = pointwise_ci(est, se, req.level);
  const double z = r.multiplier;
  switch (req.band) {
    case BandKind::pointwise:
      break;
    case BandKind::log_scaled: {
      const double inflate = std::log(static_cast<double>(ortho.d_eff));
      if (ortho.d_eff < 3)
        warnings.push_back("d_eff < 3: ln(d_eff) inflation is below 1 and may be anti-conservative");
      warnings.push_back("log_scaled band uses the natural logarithm of d_eff");
      r.multiplier = z * inflate;
      break;
    }
    case BandKind::mvn_quantile: {
      const Eigen::MatrixXd rho = influence_correlation(delta.D);
      const double q = mvn_max_quantile(rho, req.level, req.mc_samples, req.seed);
      // Never narrower than the pointwise interval.
      r.multiplier = std::max(q, z);
      warnings.push_back("mvn_quantile band validity is conjectural");
      break;
    }
  }
  r.lower = est - r.multiplier * se;
  r.upper = est + r.multiplier * se;
  r.method = req.method;
  r.band = req.band;
  r.probability_scale = req.probability_scale;
  r.d_eff = ortho.d_eff;
  r.warnings = std::move(warnings);
  return r;
}

ScoreReport score_diagnostics(const InferenceContext& ctx, const std::vector<std::size_t>& probe,
                              const Eigen::MatrixXd& phi_grid) {
  const auto support = ctx.support();
  if (support.empty()) throw InputError("model has an empty support");
  const double n = static_cast<double>(ctx.n());
  const Eigen::VectorXd m = ctx.fitted_mean();
  const Eigen::VectorXd r = (ctx.w.array() * (ctx.y - m).array()).matrix();

  ScoreReport rep;
  const auto& cols = probe.empty() ? support : probe;
  for (auto j : cols)
    rep.max_score = std::max(rep.max_score,
                             std::abs(ctx.design->dot(static_cast<Eigen::Index>(j), r)) / n);

  // A zero-residual gaussian fit has no variance scale; every score is zero
  // then, so any positive weighting gives the same report.
  const bool exact = ctx.family == FamilyKind::gaussian && r.isZero(0.0);
  const OrthoBasis ortho =
      orthonormalize(*ctx.design, support, exact ? ctx.w : inference_weights(ctx));
  rep.d_eff = ortho.d_eff;
  const Eigen::MatrixXd star = ctx.design->dense(support) * ortho.A.transpose();
  const Eigen::VectorXd r_star = star.transpose() * r / n;
  if (phi_grid.size() > 0) {
    if (phi_grid.cols() != static_cast<Eigen::Index>(support.size()))
      throw InputError("grid evaluations do not match the model support");
    rep.r_tilde = phi_grid * ortho.A.transpose() * r_star;
  }
  rep.threshold = std::sqrt(static_cast<double>(ortho.d_eff) / n);

  // Along beta(1 + delta h) with sum h|beta| = 0 the directional derivative is
  // sign(b_j0) g_j0 - sign(b_j*) g_j*, g the loss gradient.
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (auto j : support) {
    if (!ctx.penalized.empty() && !ctx.penalized[j]) continue;
    const double g = -ctx.design->dot(static_cast<Eigen::Index>(j), r) / n;
    const double s = (ctx.beta(static_cast<Eigen::Index>(j)) > 0 ? 1.0 : -1.0) * g;
    lo = any ? std::min(lo, s) : s;
    hi = any ? std::max(hi, s) : s;
    any = true;
  }
  rep.norm_preserving_score = any ? hi - lo : 0.0;
  return rep;
}

}  // namespace halk
