#pragma once

// Covariate rescaling, binary expansion and design-matrix assembly.

#include <Eigen/Dense>
#include <cstddef>
#include <string>
#include <vector>

#include "core/knots.hpp"

namespace halk {

struct ColumnScale {
  std::string name;
  bool binary = false;
  double min = 0.0;  // continuous only
  double max = 1.0;
};

/// Per-column min-max map for continuous covariates; binary columns pass
/// through unchanged.
struct RescaleMap {
  std::vector<ColumnScale> columns;

  int continuous_count() const;
  int binary_count() const;
};

/// Rescaled covariates split by kind.
struct ScaledCovariates {
  Eigen::MatrixXd X;  // n x d continuous, in [0,1]
  Eigen::MatrixXd B;  // n x m binary, in {0,1}
  std::size_t clipped = 0;  // entries moved back into [0,1]
};

/// Requires n >= 2, non-constant continuous columns and {0,1} binary columns.
RescaleMap fit_rescale(const Eigen::MatrixXd& raw, const std::vector<bool>& binary,
                       const std::vector<std::string>& names = {});

/// Out-of-range continuous values are clipped and counted.
ScaledCovariates apply_rescale(const RescaleMap& map, const Eigen::MatrixXd& raw);

/// Inverse map for continuous coordinates.
Eigen::MatrixXd invert_rescale(const RescaleMap& map, const Eigen::MatrixXd& X);

/// Replicates every term across I(b >= u) for each binary mask u dominated by
/// some observed row of B. Mask 0 comes first, so the unmodified term is kept.
BasisDictionary binary_expand(const BasisDictionary& dict, const Eigen::MatrixXd& B);

/// n x p basis evaluations. Columns with fewer than 30% nonzeros are kept as
/// (row, value) lists, the rest densely.
class DesignMatrix {
 public:
  static constexpr double kSparseDensity = 0.3;

  DesignMatrix() = default;
  explicit DesignMatrix(Eigen::Index rows) : rows_(rows) {}

  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return static_cast<Eigen::Index>(columns_.size()); }

  void push_column(const Eigen::VectorXd& values);

  bool is_sparse(Eigen::Index j) const { return columns_[static_cast<std::size_t>(j)].sparse; }
  double value(Eigen::Index i, Eigen::Index j) const;
  Eigen::VectorXd column(Eigen::Index j) const;

  /// sum_i phi_ij v_i
  double dot(Eigen::Index j, const Eigen::VectorXd& v) const;
  /// sum_i w_i phi_ij^2
  double weighted_sq_norm(Eigen::Index j, const Eigen::VectorXd& w) const;
  /// v += a * phi_j
  void axpy(Eigen::Index j, double a, Eigen::VectorXd& v) const;
  /// v += a * w .* phi_j
  void axpy_weighted(Eigen::Index j, double a, const Eigen::VectorXd& w, Eigen::VectorXd& v) const;

  /// Phi * beta.
  Eigen::VectorXd multiply(const Eigen::VectorXd& beta) const;
  /// Phi^T v.
  Eigen::VectorXd transpose_multiply(const Eigen::VectorXd& v) const;

  Eigen::MatrixXd dense() const;
  Eigen::MatrixXd dense(const std::vector<std::size_t>& cols) const;

  DesignMatrix select_rows(const std::vector<Eigen::Index>& rows) const;

 private:
  struct Column {
    bool sparse = false;
    std::vector<Eigen::Index> index;
    std::vector<double> value;
    Eigen::VectorXd dense;
  };
  Eigen::Index rows_ = 0;
  std::vector<Column> columns_;
};

/// Exact evaluations of every dictionary term at each row.
DesignMatrix assemble(const BasisDictionary& dict, const Eigen::MatrixXd& X,
                      const Eigen::MatrixXd& B);

}  // namespace halk
