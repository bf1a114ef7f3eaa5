#include "core/ortho.hpp"

#include <algorithm>
#include <cmath>

namespace halk {

PivotedMGS pivoted_mgs(const Eigen::MatrixXd& M, double drop_tol) {
  const Eigen::Index n = M.rows();
  const Eigen::Index p = M.cols();
  Eigen::MatrixXd W = M;
  Eigen::MatrixXd C = Eigen::MatrixXd::Identity(p, p);  // W = M * C throughout
  std::vector<bool> open(static_cast<std::size_t>(p), true);
  PivotedMGS out;
  std::vector<Eigen::Index> accepted;

  for (;;) {
    Eigen::Index best = -1;
    double best_norm = -1.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (!open[static_cast<std::size_t>(j)]) continue;
      const double nj = W.col(j).norm();
      if (best < 0 || nj > best_norm * (1.0 + 1e-12)) {
        best = j;
        best_norm = nj;
      }
    }
    if (best < 0) break;
    if (accepted.empty()) {
      out.leading_norm = best_norm;
      if (!(best_norm > 0.0)) break;
    }
    if (best_norm < drop_tol * out.leading_norm) break;

    open[static_cast<std::size_t>(best)] = false;
    // Second orthogonalisation pass against the accepted directions.
    for (auto s : accepted) {
      const double r = W.col(s).dot(W.col(best));
      W.col(best) -= r * W.col(s);
      C.col(best) -= r * C.col(s);
    }
    const double norm = W.col(best).norm();
    if (norm < drop_tol * out.leading_norm) continue;  // lost to cancellation
    W.col(best) /= norm;
    C.col(best) /= norm;
    accepted.push_back(best);

    for (Eigen::Index j = 0; j < p; ++j) {
      if (!open[static_cast<std::size_t>(j)]) continue;
      const double r = W.col(best).dot(W.col(j));
      W.col(j) -= r * W.col(best);
      C.col(j) -= r * C.col(best);
    }
  }

  const auto r = static_cast<Eigen::Index>(accepted.size());
  out.Q.resize(n, r);
  out.T.resize(p, r);
  for (Eigen::Index t = 0; t < r; ++t) {
    out.Q.col(t) = W.col(accepted[static_cast<std::size_t>(t)]);
    out.T.col(t) = C.col(accepted[static_cast<std::size_t>(t)]);
    out.retained.push_back(static_cast<std::size_t>(accepted[static_cast<std::size_t>(t)]));
  }
  // The running Q drifts from M * T on ill-conditioned inputs. Recompute it
  // from T and re-orthonormalise through the Cholesky factor of its Gram
  // matrix; L^{-T} is upper triangular, so the pivot-order structure holds.
  for (int pass = 0; pass < 2 && r > 0; ++pass) {
    const Eigen::MatrixXd S = M * out.T;
    const Eigen::MatrixXd G = S.transpose() * S;
    const double err = (G - Eigen::MatrixXd::Identity(r, r)).cwiseAbs().maxCoeff();
    if (err <= 1e-14) {
      out.Q = S;
      break;
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(G);
    if (llt.info() != Eigen::Success) break;
    const auto U = llt.matrixU();  // G = U^T U
    out.T = U.solve<Eigen::OnTheRight>(out.T);
    out.Q = U.solve<Eigen::OnTheRight>(S);
  }
  for (Eigen::Index j = 0; j < p; ++j) {
    if (std::find(accepted.begin(), accepted.end(), j) == accepted.end())
      out.dropped.push_back(static_cast<std::size_t>(j));
  }
  return out;
}

}  // namespace halk
