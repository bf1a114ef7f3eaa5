#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

namespace halk {

/// Result of modified Gram-Schmidt with column pivoting on an n x p matrix M.
struct PivotedMGS {
  std::vector<std::size_t> retained;  // column indices of M in pivot order
  std::vector<std::size_t> dropped;   // ascending
  Eigen::MatrixXd Q;                  // n x r orthonormal (Euclidean)
  /// p x r; Q = M * T. Column t only involves retained[0..t], so T is upper
  /// triangular once its rows are put in pivot order.
  Eigen::MatrixXd T;
  double leading_norm = 0.0;
};

/// Columns whose residual norm falls below drop_tol * (first pivot norm) are
/// dropped. Each accepted column is orthogonalised twice. Pivot ties within
/// 1e-12 relative go to the lowest index.
PivotedMGS pivoted_mgs(const Eigen::MatrixXd& M, double drop_tol = 1e-10);

}  // namespace halk
