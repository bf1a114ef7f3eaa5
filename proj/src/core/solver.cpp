#include "core/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "core/error.hpp"
#include "core/ortho.hpp"

namespace halk {

std::string to_string(FamilyKind f) {
  switch (f) {
    case FamilyKind::gaussian:
      return "gaussian";
    case FamilyKind::weighted_gaussian:
      return "weighted_gaussian";
    case FamilyKind::binomial:
      return "binomial";
  }
  return "gaussian";
}

FamilyKind parse_family(const std::string& tag) {
  if (tag == "gaussian") return FamilyKind::gaussian;
  if (tag == "weighted_gaussian" || tag == "weighted-gaussian") return FamilyKind::weighted_gaussian;
  if (tag == "binomial") return FamilyKind::binomial;
  throw InputError("unknown family '" + tag + "' (expected gaussian, weighted_gaussian, binomial)");
}

std::string to_string(FitKind k) {
  switch (k) {
    case FitKind::hal:
      return "hal";
    case FitKind::relax:
      return "relax";
    case FitKind::sieve:
      return "sieve";
  }
  return "hal";
}

FitKind parse_fit_kind(const std::string& tag) {
  if (tag == "hal") return FitKind::hal;
  if (tag == "relax") return FitKind::relax;
  if (tag == "sieve") return FitKind::sieve;
  throw InputError("unknown estimator '" + tag + "' (expected hal, relax, sieve)");
}

void Problem::validate() const {
  if (design == nullptr) throw InputError("problem has no design matrix");
  if (y.size() != design->rows()) throw InputError("response length does not match design rows");
  if (w.size() != y.size()) throw InputError("weight length does not match response length");
  if (penalized.size() != static_cast<std::size_t>(design->cols()))
    throw InputError("penalty pattern length does not match design columns");
  if (y.size() == 0) throw InputError("empty response");
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (!(w(i) > 0.0) || !std::isfinite(w(i))) throw InputError("weights must be finite and > 0");
    if (!std::isfinite(y(i))) throw InputError("response has non-finite values");
    if (family == FamilyKind::binomial && y(i) != 0.0 && y(i) != 1.0)
      throw InputError("binomial response must be 0 or 1");
  }
}

std::vector<bool> default_penalty(const BasisDictionary& dict, bool unpenalize_parametric) {
  std::vector<bool> pen(dict.size(), true);
  for (std::size_t j = 0; j < dict.size(); ++j) {
    const auto& t = dict.terms[j];
    if (t.binary_mask == 0 && t.index.chain.is_intercept()) pen[j] = false;
    if (unpenalize_parametric && t.index.knot.empty()) pen[j] = false;
  }
  return pen;
}

std::vector<std::size_t> Fit::support() const {
  std::vector<std::size_t> s;
  for (Eigen::Index j = 0; j < beta.size(); ++j)
    if (beta(j) != 0.0) s.push_back(static_cast<std::size_t>(j));
  return s;
}

Eigen::VectorXd mean_response(FamilyKind f, const Eigen::VectorXd& eta) {
  if (f != FamilyKind::binomial) return eta;
  Eigen::VectorXd m(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) m(i) = expit(eta(i));
  return m;
}

namespace {

double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double penalty_norm(const Problem& prob, const Eigen::VectorXd& beta) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < beta.size(); ++j)
    if (prob.penalized[static_cast<std::size_t>(j)]) s += std::abs(beta(j));
  return s;
}

double soft_threshold(double u, double t) {
  if (u > t) return u - t;
  if (u < -t) return u + t;
  return 0.0;
}

// Coordinate descent for 0.5 (1/n) sum v_i (z_i - eta_i)^2 + lambda sum pen |beta_j|.
// Gram mode keeps g = b - H beta with H = (1/n) Phi^T V Phi; residual mode
// keeps r = z - Phi beta.
class QuadraticCD {
 public:
  QuadraticCD(const DesignMatrix& X, const std::vector<bool>& pen, bool gram)
      : X_(X), pen_(pen), gram_(gram) {}

  void set_data(const Eigen::VectorXd& v, const Eigen::VectorXd& z) {
    const double inv_n = 1.0 / static_cast<double>(X_.rows());
    v_ = v;
    z_ = z;
    if (gram_) {
      Eigen::MatrixXd D = X_.dense();
      const Eigen::VectorXd sv = v.array().sqrt();
      D = sv.asDiagonal() * D;
      H_.noalias() = D.transpose() * D;
      H_ *= inv_n;
      b_ = X_.transpose_multiply((v.array() * z.array()).matrix()) * inv_n;
      diag_ = H_.diagonal();
    } else {
      diag_.resize(X_.cols());
      for (Eigen::Index j = 0; j < X_.cols(); ++j) diag_(j) = X_.weighted_sq_norm(j, v) * inv_n;
    }
  }

  struct Outcome {
    long sweeps = 0;
    bool converged = false;
    double kkt = 0.0;
  };

  // Active-set iteration. Each round scans the working set for coordinates
  // whose zero value violates the optimality conditions, lets the largest
  // violators enter, settles the active coordinates by coordinate descent and
  // then solves the active set exactly (polish). lambda_prev drives the
  // sequential strong rule: coordinates with |gradient| < 2 lambda -
  // lambda_prev start outside the working set and are only added when the
  // final check over all coordinates finds them violated.
  Outcome solve(double lambda, Eigen::VectorXd& beta, const SolverOptions& opt,
                std::vector<double>* trace, long sweep_budget, double lambda_prev) {
    refresh(beta);
    const Eigen::Index p = X_.cols();
    const double screen = 2.0 * lambda - std::max(lambda, lambda_prev);
    std::vector<char> in(static_cast<std::size_t>(p), 0);
    std::vector<Eigen::Index> working;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (!pen_[static_cast<std::size_t>(j)] || beta(j) != 0.0 || std::abs(neg_grad(j)) >= screen) {
        in[static_cast<std::size_t>(j)] = 1;
        working.push_back(j);
      }
    }
    Outcome out;
    auto record = [&] {
      if (trace) trace->push_back(objective(lambda, beta));
    };
    const double enter_tol = 0.5 * opt.kkt_tol;
    int stalls = 0;
    while (out.sweeps < sweep_budget) {
      // Scan for entering coordinates.
      std::vector<std::pair<double, Eigen::Index>> viol;
      for (auto j : working) {
        if (beta(j) != 0.0 || !pen_[static_cast<std::size_t>(j)] || !(diag_(j) > 0.0)) continue;
        const double excess = std::abs(neg_grad(j)) - lambda;
        if (excess > enter_tol) viol.emplace_back(excess, j);
      }
      ++out.sweeps;
      std::vector<Eigen::Index> block = active_set(beta);
      if (!viol.empty()) {
        const std::size_t take = std::min<std::size_t>(viol.size(), kEnterBlock);
        std::partial_sort(viol.begin(), viol.begin() + static_cast<std::ptrdiff_t>(take), viol.end(),
                          [](const auto& x, const auto& y) {
                            return x.first > y.first || (x.first == y.first && x.second < y.second);
                          });
        for (std::size_t t = 0; t < take; ++t) block.push_back(viol[t].second);
        std::sort(block.begin(), block.end());
      } else {
        // No entering coordinates: certify over every coordinate, growing
        // the working set if the strong rule discarded a violator.
        refresh(beta);
        bool grew = false;
        for (Eigen::Index j = 0; j < p; ++j) {
          if (in[static_cast<std::size_t>(j)] || !(diag_(j) > 0.0)) continue;
          if (std::abs(neg_grad(j)) - lambda > enter_tol) {
            in[static_cast<std::size_t>(j)] = 1;
            working.push_back(j);
            grew = true;
          }
        }
        if (grew) {
          std::sort(working.begin(), working.end());
          continue;
        }
        out.kkt = kkt(lambda, beta);
        if (out.kkt <= opt.kkt_tol) {
          out.converged = true;
          return out;
        }
        if (++stalls > 50) break;
      }
      // Settle the block, then solve its sign pattern exactly.
      for (int t = 0; t < 10 && out.sweeps < sweep_budget; ++t) {
        const double change = sweep(block, lambda, beta);
        ++out.sweeps;
        record();
        if (change < opt.tol) break;
      }
      if (polish(lambda, beta)) record();
    }
    refresh(beta);
    out.kkt = kkt(lambda, beta);
    out.converged = out.kkt <= opt.kkt_tol;
    return out;
  }

  static constexpr std::size_t kEnterBlock = 16;

  double objective(double lambda, const Eigen::VectorXd& beta) const {
    const Eigen::VectorXd r = z_ - X_.multiply(beta);
    double pen = 0.0;
    for (Eigen::Index j = 0; j < beta.size(); ++j)
      if (pen_[static_cast<std::size_t>(j)]) pen += std::abs(beta(j));
    return 0.5 * (v_.array() * r.array().square()).sum() / static_cast<double>(X_.rows()) +
           lambda * pen;
  }

 private:
  double neg_grad(Eigen::Index j) const {
    if (gram_) return g_(j);
    return X_.dot(j, vr_) / static_cast<double>(X_.rows());
  }

  void refresh(const Eigen::VectorXd& beta) {
    if (gram_) {
      g_ = b_;
      for (Eigen::Index j = 0; j < beta.size(); ++j)
        if (beta(j) != 0.0) g_.noalias() -= beta(j) * H_.col(j);
    } else {
      vr_ = (v_.array() * (z_ - X_.multiply(beta)).array()).matrix();
    }
  }

  double sweep(const std::vector<Eigen::Index>& idx, double lambda, Eigen::VectorXd& beta) {
    double max_change = 0.0;
    for (auto j : idx) {
      const double h = diag_(j);
      if (!(h > 0.0)) continue;
      const double u = neg_grad(j) + h * beta(j);
      const double next =
          pen_[static_cast<std::size_t>(j)] ? soft_threshold(u, lambda) / h : u / h;
      const double delta = next - beta(j);
      if (delta == 0.0) continue;
      beta(j) = next;
      max_change = std::max(max_change, std::abs(delta));
      if (gram_) {
        g_.noalias() -= delta * H_.col(j);
      } else {
        // vr = v * (z - Phi beta)
        update_vr(j, delta);
      }
    }
    return max_change;
  }

  void update_vr(Eigen::Index j, double delta) { X_.axpy_weighted(j, -delta, v_, vr_); }

  // Active-set refinement: minimise the quadratic over the nonzero (and
  // unpenalised) coordinates with their signs held fixed. When the minimiser
  // flips a sign, move to the first sign change, drop that coordinate and
  // solve again. Each accepted move lowers the objective.
  bool polish(double lambda, Eigen::VectorXd& beta) {
    std::vector<Eigen::Index> active;
    for (Eigen::Index j = 0; j < beta.size(); ++j)
      if (diag_(j) > 0.0 && (beta(j) != 0.0 || !pen_[static_cast<std::size_t>(j)]))
        active.push_back(j);
    if (active.empty() || static_cast<Eigen::Index>(active.size()) > kPolishMax) return false;

    const auto m0 = static_cast<Eigen::Index>(active.size());
    Eigen::MatrixXd H0(m0, m0);
    Eigen::VectorXd b0(m0);
    if (gram_) {
      for (Eigen::Index a = 0; a < m0; ++a) {
        for (Eigen::Index c = 0; c < m0; ++c) H0(a, c) = H_(active[a], active[c]);
        b0(a) = b_(active[a]);
      }
    } else {
      const double inv_n = 1.0 / static_cast<double>(X_.rows());
      std::vector<std::size_t> cols(active.begin(), active.end());
      Eigen::MatrixXd D = X_.dense(cols);
      b0 = D.transpose() * (v_.array() * z_.array()).matrix() * inv_n;
      D = v_.array().sqrt().matrix().asDiagonal() * D;
      H0.noalias() = D.transpose() * D;
      H0 *= inv_n;
    }

    const double start = objective(lambda, beta);
    Eigen::VectorXd cur = beta;
    std::vector<Eigen::Index> keep(static_cast<std::size_t>(m0));  // positions into active
    for (Eigen::Index a = 0; a < m0; ++a) keep[static_cast<std::size_t>(a)] = a;
    bool moved = false;
    while (!keep.empty()) {
      const auto m = static_cast<Eigen::Index>(keep.size());
      Eigen::MatrixXd H(m, m);
      Eigen::VectorXd rhs(m);
      for (Eigen::Index a = 0; a < m; ++a) {
        const auto pa = keep[static_cast<std::size_t>(a)];
        for (Eigen::Index c = 0; c < m; ++c) H(a, c) = H0(pa, keep[static_cast<std::size_t>(c)]);
        rhs(a) = b0(pa);
        const auto j = active[static_cast<std::size_t>(pa)];
        if (pen_[static_cast<std::size_t>(j)]) rhs(a) -= lambda * (cur(j) > 0 ? 1.0 : -1.0);
      }
      const double scale = std::max(1.0, rhs.cwiseAbs().maxCoeff());
      Eigen::VectorXd target;
      bool ray = false;  // move along target without bound
      Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
      if (ldlt.info() == Eigen::Success) target = ldlt.solve(rhs);
      if (target.size() != m || !target.allFinite() ||
          (H * target - rhs).cwiseAbs().maxCoeff() > 1e-9 * scale) {
        // Singular block with rhs outside the range of H: the quadratic keeps
        // decreasing along the null-space part of rhs.
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(H);
        const Eigen::VectorXd ls = cod.solve(rhs);
        if (!ls.allFinite()) break;
        const Eigen::VectorXd null_part = rhs - H * ls;
        if (null_part.cwiseAbs().maxCoeff() <= 1e-9 * scale) {
          target = ls;
        } else {
          target = null_part;
          ray = true;
        }
      }

      double step = ray ? std::numeric_limits<double>::infinity() : 1.0;
      Eigen::Index blocked = -1;
      for (Eigen::Index a = 0; a < m; ++a) {
        const auto j = active[static_cast<std::size_t>(keep[static_cast<std::size_t>(a)])];
        if (!pen_[static_cast<std::size_t>(j)]) continue;
        if (ray) {
          if (target(a) * cur(j) < 0.0) {
            const double t = -cur(j) / target(a);
            if (t < step) {
              step = t;
              blocked = a;
            }
          }
        } else if (target(a) * cur(j) <= 0.0) {
          const double t = cur(j) / (cur(j) - target(a));
          if (t < step) {
            step = t;
            blocked = a;
          }
        }
      }
      if (ray && blocked < 0) break;
      for (Eigen::Index a = 0; a < m; ++a) {
        const auto j = active[static_cast<std::size_t>(keep[static_cast<std::size_t>(a)])];
        cur(j) += ray ? step * target(a) : step * (target(a) - cur(j));
      }
      moved = true;
      if (blocked < 0) break;
      cur(active[static_cast<std::size_t>(keep[static_cast<std::size_t>(blocked)])]) = 0.0;
      keep.erase(keep.begin() + blocked);
    }
    // Guard against roundoff in nearly singular systems.
    if (!moved || objective(lambda, cur) > start) return false;
    beta = std::move(cur);
    refresh(beta);
    return true;
  }

  static constexpr Eigen::Index kPolishMax = 1500;

  std::vector<Eigen::Index> active_set(const Eigen::VectorXd& beta) const {
    std::vector<Eigen::Index> a;
    for (Eigen::Index j = 0; j < beta.size(); ++j)
      if (beta(j) != 0.0 || !pen_[static_cast<std::size_t>(j)]) a.push_back(j);
    return a;
  }

  double kkt(double lambda, const Eigen::VectorXd& beta) const {
    double worst = 0.0;
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
      if (!(diag_(j) > 0.0)) continue;
      const double g = neg_grad(j);
      double viol;
      if (!pen_[static_cast<std::size_t>(j)]) {
        viol = std::abs(g);
      } else if (beta(j) == 0.0) {
        viol = std::max(0.0, std::abs(g) - lambda);
      } else {
        viol = std::abs(g - lambda * (beta(j) > 0 ? 1.0 : -1.0));
      }
      worst = std::max(worst, viol);
    }
    return worst;
  }

  const DesignMatrix& X_;
  const std::vector<bool>& pen_;
  bool gram_;
  Eigen::VectorXd v_, z_;
  Eigen::MatrixXd H_;
  Eigen::VectorXd b_, diag_, g_, vr_;
};

}  // namespace

double mean_loss(const Problem& prob, const Eigen::VectorXd& eta) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    double l;
    if (prob.family == FamilyKind::binomial) {
      l = softplus(eta(i)) - prob.y(i) * eta(i);
    } else {
      const double r = prob.y(i) - eta(i);
      l = 0.5 * r * r;
    }
    s += prob.w(i) * l;
  }
  return s / static_cast<double>(eta.size());
}

double penalized_objective(const Problem& prob, const Eigen::VectorXd& beta, double lambda) {
  return mean_loss(prob, prob.design->multiply(beta)) + lambda * penalty_norm(prob, beta);
}

Eigen::VectorXd loss_gradient(const Problem& prob, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd m = mean_response(prob.family, prob.design->multiply(beta));
  const Eigen::VectorXd r = (prob.w.array() * (prob.y - m).array()).matrix();
  return -prob.design->transpose_multiply(r) / static_cast<double>(prob.n());
}

double kkt_violation(const Problem& prob, const Eigen::VectorXd& beta, double lambda) {
  const Eigen::VectorXd g = loss_gradient(prob, beta);
  double worst = 0.0;
  for (Eigen::Index j = 0; j < g.size(); ++j) {
    double viol;
    if (!prob.penalized[static_cast<std::size_t>(j)]) {
      viol = std::abs(g(j));
    } else if (beta(j) == 0.0) {
      viol = std::max(0.0, std::abs(g(j)) - lambda);
    } else {
      viol = std::abs(g(j) + lambda * (beta(j) > 0 ? 1.0 : -1.0));
    }
    worst = std::max(worst, viol);
  }
  return worst;
}

double max_score(const Problem& prob, const Eigen::VectorXd& beta,
                 const std::vector<std::size_t>& cols) {
  const Eigen::VectorXd m = mean_response(prob.family, prob.design->multiply(beta));
  const Eigen::VectorXd r = (prob.w.array() * (prob.y - m).array()).matrix();
  double worst = 0.0;
  for (auto j : cols)
    worst = std::max(worst, std::abs(prob.design->dot(static_cast<Eigen::Index>(j), r)) /
                                static_cast<double>(prob.n()));
  return worst;
}

Eigen::VectorXd unpenalized_fit(const Problem& prob) {
  return relax_refit(prob, {}).beta;
}

double lambda_max(const Problem& prob) {
  const Eigen::VectorXd beta0 = unpenalized_fit(prob);
  const Eigen::VectorXd g = loss_gradient(prob, beta0);
  double lmax = 0.0;
  for (Eigen::Index j = 0; j < g.size(); ++j)
    if (prob.penalized[static_cast<std::size_t>(j)]) lmax = std::max(lmax, std::abs(g(j)));
  return lmax;
}

std::vector<double> lambda_grid(double lmax, std::size_t count, double ratio) {
  if (count == 0) throw InputError("lambda grid needs at least one point");
  if (!(ratio > 0.0 && ratio < 1.0)) throw InputError("lambda ratio must lie in (0,1)");
  // A zero lambda_max (response already fit by unpenalised terms) still gets a
  // usable, strictly decreasing grid.
  if (!(lmax > 0.0)) lmax = 1e-12;
  std::vector<double> grid(count);
  const double step = count > 1 ? std::log(ratio) / static_cast<double>(count - 1) : 0.0;
  for (std::size_t t = 0; t < count; ++t) grid[t] = lmax * std::exp(step * static_cast<double>(t));
  grid[0] = lmax;
  return grid;
}

// Owns the per-problem state reused across lambdas.
class SolverEngine {
 public:
  SolverEngine(const Problem& prob, const SolverOptions& opt)
      : prob_(prob),
        opt_(opt),
        cd_(*prob.design, prob_.penalized,
            prob.family != FamilyKind::binomial &&
                static_cast<std::size_t>(prob.p()) <= opt.gram_max_p) {
    prob_.validate();
    if (prob_.family != FamilyKind::binomial) cd_.set_data(prob_.w, prob_.y);
    null_loss_ = mean_loss(prob_, prob_.design->multiply(unpenalized_fit(prob_)));
  }

  // lambda_prev: penalty the warm start was computed at (screening only).
  PathPoint solve(double lambda, const Eigen::VectorXd& warm, double lambda_prev) {
    PathPoint pt;
    pt.lambda = lambda;
    Eigen::VectorXd beta = warm;
    std::vector<double>* trace = opt_.record_objective ? &pt.objective_trace : nullptr;
    if (prob_.family != FamilyKind::binomial) {
      const auto res = cd_.solve(lambda, beta, opt_, trace, opt_.max_sweeps, lambda_prev);
      pt.report.iterations = res.sweeps;
      pt.report.converged = res.converged;
    } else {
      solve_binomial(lambda, beta, pt, trace, lambda_prev);
    }
    pt.beta = std::move(beta);
    pt.l1_norm = penalty_norm(prob_, pt.beta);
    const double loss = mean_loss(prob_, prob_.design->multiply(pt.beta));
    pt.objective = loss + lambda * pt.l1_norm;
    pt.deviance_ratio = null_loss_ > 0.0 ? 1.0 - loss / null_loss_ : 0.0;
    pt.report.kkt_violation = kkt_violation(prob_, pt.beta, lambda);
    if (!pt.report.converged) pt.report.notes.push_back("coordinate descent did not converge");
    return pt;
  }

  const Problem& problem() const { return prob_; }

 private:
  void solve_binomial(double lambda, Eigen::VectorXd& beta, PathPoint& pt,
                      std::vector<double>* trace, double lambda_prev) {
    const Eigen::Index n = prob_.n();
    Eigen::VectorXd eta = prob_.design->multiply(beta);
    double obj = mean_loss(prob_, eta) + lambda * penalty_norm(prob_, beta);
    long budget = opt_.max_sweeps;
    pt.report.converged = false;
    Eigen::VectorXd v(n), z(n);
    for (int outer = 0; outer < 200 && budget > 0; ++outer) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double m = expit(eta(i));
        const double s = std::max(m * (1.0 - m), 1e-5);
        v(i) = prob_.w(i) * s;
        z(i) = eta(i) + (prob_.y(i) - m) / s;
      }
      cd_.set_data(v, z);
      Eigen::VectorXd next = beta;
      const auto res = cd_.solve(lambda, next, opt_, nullptr, budget, outer == 0 ? lambda_prev : lambda);
      budget -= res.sweeps;
      pt.report.iterations += res.sweeps;
      // Step halving on the true objective.
      Eigen::VectorXd eta_next = prob_.design->multiply(next);
      double obj_next = mean_loss(prob_, eta_next) + lambda * penalty_norm(prob_, next);
      for (int h = 0; h < 40 && obj_next > obj + 1e-13 * std::max(1.0, std::abs(obj)); ++h) {
        next = 0.5 * (beta + next);
        eta_next = prob_.design->multiply(next);
        obj_next = mean_loss(prob_, eta_next) + lambda * penalty_norm(prob_, next);
      }
      const double change = (next - beta).cwiseAbs().maxCoeff();
      beta = std::move(next);
      eta = std::move(eta_next);
      obj = obj_next;
      if (trace) trace->push_back(obj);
      if (change < opt_.tol) {
        if (kkt_violation(prob_, beta, lambda) <= opt_.kkt_tol) {
          pt.report.converged = true;
          return;
        }
        if (change == 0.0) return;
      }
    }
  }

  Problem prob_;
  SolverOptions opt_;
  QuadraticCD cd_;
  double null_loss_ = 0.0;
};

std::vector<PathPoint> fit_path(const Problem& prob, const std::vector<double>& lambdas,
                                const SolverOptions& opt) {
  for (std::size_t t = 1; t < lambdas.size(); ++t)
    if (!(lambdas[t] < lambdas[t - 1])) throw InputError("lambda grid must be strictly decreasing");
  SolverEngine engine(prob, opt);
  std::vector<PathPoint> path;
  Eigen::VectorXd warm = Eigen::VectorXd::Zero(prob.p());
  double prev = lambdas.empty() ? 0.0 : lambdas.front();
  for (double lambda : lambdas) {
    path.push_back(engine.solve(lambda, warm, prev));
    prev = lambda;
    warm = path.back().beta;
    if (prob.family == FamilyKind::binomial &&
        path.back().deviance_ratio > opt.binomial_dev_ratio_stop)
      break;
  }
  return path;
}

PathPoint fit_lambda(const Problem& prob, double lambda, const Eigen::VectorXd* warm,
                     const SolverOptions& opt) {
  SolverEngine engine(prob, opt);
  const Eigen::VectorXd start = warm ? *warm : Eigen::VectorXd::Zero(prob.p());
  return engine.solve(lambda, start, warm ? std::numeric_limits<double>::infinity() : lambda);
}

PathSolver::PathSolver(Problem prob, SolverOptions opt)
    : prob_(std::move(prob)), opt_(opt) {
  engine_ = std::make_shared<SolverEngine>(prob_, opt_);
}

void PathSolver::set_grid(std::vector<double> lambdas) {
  grid_ = std::move(lambdas);
  path_.reset();
}

const std::vector<PathPoint>& PathSolver::path() {
  if (!path_) {
    if (grid_.empty()) grid_ = lambda_grid(lambda_max(prob_));
    for (std::size_t t = 1; t < grid_.size(); ++t)
      if (!(grid_[t] < grid_[t - 1])) throw InputError("lambda grid must be strictly decreasing");
    std::vector<PathPoint> pts;
    Eigen::VectorXd warm = Eigen::VectorXd::Zero(prob_.p());
    double prev = grid_.front();
    for (double lambda : grid_) {
      pts.push_back(engine_->solve(lambda, warm, prev));
      prev = lambda;
      warm = pts.back().beta;
      if (prob_.family == FamilyKind::binomial &&
          pts.back().deviance_ratio > opt_.binomial_dev_ratio_stop)
        break;
    }
    path_ = std::move(pts);
  }
  return *path_;
}

Fit PathSolver::to_fit(const PathPoint& pt) const {
  Fit f;
  f.kind = FitKind::hal;
  f.beta = pt.beta;
  f.lambda = pt.lambda;
  f.l1_norm = pt.l1_norm;
  f.report = pt.report;
  f.objective_trace = pt.objective_trace;
  return f;
}

Fit PathSolver::at_lambda(double lambda) {
  const auto& pts = path();
  // Warm start from the nearest path point with larger lambda.
  const PathPoint* warm = &pts.front();
  for (const auto& pt : pts)
    if (pt.lambda >= lambda) warm = &pt;
  return to_fit(engine_->solve(lambda, warm->beta, warm->lambda));
}

Fit PathSolver::constrained(double C) {
  if (!(C >= 0.0) || !std::isfinite(C)) throw InputError("L1 bound C must be finite and >= 0");
  const double tol = std::max(1e-4, 1e-3 * C);
  const auto& pts = path();
  auto finish = [&](const PathPoint& pt) {
    Fit f = to_fit(pt);
    f.c_target = C;
    return f;
  };
  if (pts.front().l1_norm >= C - tol) return finish(pts.front());

  PathPoint above;  // norm < C, larger lambda
  PathPoint below;  // norm >= C, smaller lambda
  bool bracketed = false;
  for (std::size_t t = 1; t < pts.size(); ++t) {
    if (std::abs(pts[t].l1_norm - C) <= tol) return finish(pts[t]);
    if (pts[t].l1_norm > C) {
      above = pts[t - 1];
      below = pts[t];
      bracketed = true;
      break;
    }
  }
  if (!bracketed) {
    // Extend the path below its last lambda.
    PathPoint last = pts.back();
    for (int ext = 0; ext < 8 && !bracketed; ++ext) {
      PathPoint next = engine_->solve(last.lambda * 0.1, last.beta, last.lambda);
      if (std::abs(next.l1_norm - C) <= tol) return finish(next);
      if (next.l1_norm > C) {
        above = last;
        below = std::move(next);
        bracketed = true;
      } else {
        last = std::move(next);
      }
    }
    if (!bracketed) {
      Fit f = finish(last);
      f.report.notes.push_back("L1 bound inactive: norm at smallest lambda is below C");
      return f;
    }
  }
  for (int it = 0; it < 100; ++it) {
    const double mid = std::sqrt(above.lambda * below.lambda);
    PathPoint pt = engine_->solve(mid, above.beta, above.lambda);
    if (std::abs(pt.l1_norm - C) <= tol) return finish(pt);
    if (pt.l1_norm > C) {
      below = std::move(pt);
    } else {
      above = std::move(pt);
    }
  }
  Fit f = finish(std::abs(above.l1_norm - C) < std::abs(below.l1_norm - C) ? above : below);
  f.report.notes.push_back("L1 bisection did not reach tolerance");
  f.report.converged = false;
  return f;
}

Fit fit_constrained(const Problem& prob, double C, const SolverOptions& opt) {
  PathSolver solver(prob, opt);
  return solver.constrained(C);
}

namespace {

// Weighted least squares by Householder QR with one refinement step.
Eigen::VectorXd weighted_ls(const Eigen::MatrixXd& A, const Eigen::VectorXd& rhs) {
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
  Eigen::VectorXd x = qr.solve(rhs);
  const Eigen::VectorXd r = rhs - A * x;
  x += qr.solve(r);
  return x;
}

double binomial_nll(const Eigen::VectorXd& y, const Eigen::VectorXd& w, const Eigen::VectorXd& eta) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) s += w(i) * (softplus(eta(i)) - y(i) * eta(i));
  return s;
}

}  // namespace

Fit relax_refit(const Problem& prob, const std::vector<std::size_t>& support) {
  prob.validate();
  std::set<std::size_t> cols(support.begin(), support.end());
  for (std::size_t j = 0; j < prob.penalized.size(); ++j)
    if (!prob.penalized[j]) cols.insert(j);
  for (auto j : cols)
    if (j >= static_cast<std::size_t>(prob.p())) throw InputError("support index out of range");

  const std::vector<std::size_t> cand(cols.begin(), cols.end());
  Fit fit;
  fit.kind = FitKind::relax;
  fit.beta = Eigen::VectorXd::Zero(prob.p());
  if (cand.empty()) return fit;

  const Eigen::MatrixXd Phi = prob.design->dense(cand);
  const Eigen::VectorXd sw = prob.w.array().sqrt();
  const auto mgs = pivoted_mgs(sw.asDiagonal() * Phi);
  std::vector<std::size_t> keep = mgs.retained;
  std::sort(keep.begin(), keep.end());
  for (auto d : mgs.dropped) fit.report.dropped_columns.push_back(cand[d]);
  if (keep.empty()) {
    fit.report.notes.push_back("all support columns are zero on the training data");
    return fit;
  }
  Eigen::MatrixXd A(Phi.rows(), static_cast<Eigen::Index>(keep.size()));
  std::vector<std::size_t> kept_cols;
  for (std::size_t t = 0; t < keep.size(); ++t) {
    A.col(static_cast<Eigen::Index>(t)) = Phi.col(static_cast<Eigen::Index>(keep[t]));
    kept_cols.push_back(cand[keep[t]]);
  }

  Eigen::VectorXd b;
  if (prob.family != FamilyKind::binomial) {
    b = weighted_ls(sw.asDiagonal() * A, (sw.array() * prob.y.array()).matrix());
    fit.report.iterations = 1;
  } else {
    const Eigen::Index r = A.cols();
    b = Eigen::VectorXd::Zero(r);
    // Projected Newton on the box |b| <= 30: a coordinate at the cap stays fixed while
    // the score pushes it outward and is released otherwise.
    constexpr double cap = 30.0;
    Eigen::VectorXd eta = Eigen::VectorXd::Zero(A.rows());
    double nll = binomial_nll(prob.y, prob.w, eta);
    fit.report.converged = false;
    for (int it = 0; it < 200; ++it) {
      fit.report.iterations = it + 1;
      Eigen::VectorXd sv(A.rows()), rhs(A.rows()), resid(A.rows());
      for (Eigen::Index i = 0; i < A.rows(); ++i) {
        const double m = expit(eta(i));
        const double s = std::max(m * (1.0 - m), 1e-300);
        sv(i) = std::sqrt(prob.w(i) * s);
        rhs(i) = std::sqrt(prob.w(i) / s) * (prob.y(i) - m);
        resid(i) = prob.w(i) * (prob.y(i) - m);
      }
      const Eigen::VectorXd score = A.transpose() * resid / static_cast<double>(A.rows());
      std::vector<Eigen::Index> free_idx;
      double worst = 0.0;
      for (Eigen::Index j = 0; j < r; ++j) {
        if (std::abs(b(j)) == cap && score(j) * b(j) >= 0.0) continue;
        free_idx.push_back(j);
        worst = std::max(worst, std::abs(score(j)));
      }
      if (worst <= 1e-11) {
        fit.report.converged = true;
        break;
      }
      Eigen::MatrixXd Af(A.rows(), static_cast<Eigen::Index>(free_idx.size()));
      for (std::size_t t = 0; t < free_idx.size(); ++t)
        Af.col(static_cast<Eigen::Index>(t)) = A.col(free_idx[t]);
      const Eigen::VectorXd step_free = weighted_ls(sv.asDiagonal() * Af, rhs);
      Eigen::VectorXd step = Eigen::VectorXd::Zero(r);
      for (std::size_t t = 0; t < free_idx.size(); ++t) step(free_idx[t]) = step_free(static_cast<Eigen::Index>(t));
      if (!step.allFinite()) break;

      auto project = [&](double t) {
        Eigen::VectorXd c = b + t * step;
        for (Eigen::Index j = 0; j < r; ++j) c(j) = std::clamp(c(j), -cap, cap);
        return c;
      };
      double t = 1.0;
      Eigen::VectorXd cand_b = project(t);
      Eigen::VectorXd cand_eta = A * cand_b;
      double cand_nll = binomial_nll(prob.y, prob.w, cand_eta);
      for (int h = 0; h < 50 && !(cand_nll <= nll + 1e-14 * std::abs(nll)); ++h) {
        t *= 0.5;
        cand_b = project(t);
        cand_eta = A * cand_b;
        cand_nll = binomial_nll(prob.y, prob.w, cand_eta);
      }
      if (!(cand_nll <= nll + 1e-14 * std::abs(nll))) break;
      const double moved = (cand_b - b).cwiseAbs().maxCoeff();
      b = cand_b;
      eta = cand_eta;
      nll = cand_nll;
      if (moved < 1e-13) {
        fit.report.converged = true;
        break;
      }
    }
    fit.report.separation = (b.array().abs() == cap).any();
    if (fit.report.separation)
      fit.report.notes.push_back("logistic separation: coefficients capped at |beta| <= 30");
  }
  for (std::size_t t = 0; t < kept_cols.size(); ++t)
    fit.beta(static_cast<Eigen::Index>(kept_cols[t])) = b(static_cast<Eigen::Index>(t));
  if (!fit.beta.allFinite()) throw NumericError("relaxed refit produced non-finite coefficients");
  fit.l1_norm = penalty_norm(prob, fit.beta);
  fit.report.max_score = max_score(prob, fit.beta, kept_cols);
  if (!fit.report.dropped_columns.empty())
    fit.report.notes.push_back(std::to_string(fit.report.dropped_columns.size()) +
                               " rank-deficient column(s) dropped");
  return fit;
}

Prediction predict(const FittedModel& model, const Eigen::MatrixXd& X_raw) {
  const auto cov = apply_rescale(model.rescale, X_raw);
  const auto support = model.support();
  Prediction out;
  out.clipped = cov.clipped;
  out.eta = Eigen::VectorXd::Zero(X_raw.rows());
  std::vector<double> x(static_cast<std::size_t>(cov.X.cols()));
  std::vector<double> b(static_cast<std::size_t>(cov.B.cols()));
  for (Eigen::Index i = 0; i < X_raw.rows(); ++i) {
    for (std::size_t c = 0; c < x.size(); ++c) x[c] = cov.X(i, static_cast<Eigen::Index>(c));
    for (std::size_t c = 0; c < b.size(); ++c) b[c] = cov.B(i, static_cast<Eigen::Index>(c));
    // Same accumulation order as DesignMatrix::multiply.
    double eta = 0.0;
    for (auto j : support)
      eta += model.fit.beta(static_cast<Eigen::Index>(j)) * eval_term(model.dictionary.terms[j], x, b);
    out.eta(i) = eta;
  }
  out.mean = mean_response(model.family, out.eta);
  return out;
}

}  // namespace halk
