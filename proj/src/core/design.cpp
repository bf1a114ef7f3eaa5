#include "core/design.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "core/error.hpp"
#include "core/parallel.hpp"

namespace halk {

int RescaleMap::continuous_count() const {
  return static_cast<int>(std::count_if(columns.begin(), columns.end(),
                                        [](const ColumnScale& c) { return !c.binary; }));
}

int RescaleMap::binary_count() const {
  return static_cast<int>(columns.size()) - continuous_count();
}

RescaleMap fit_rescale(const Eigen::MatrixXd& raw, const std::vector<bool>& binary,
                       const std::vector<std::string>& names) {
  if (raw.rows() < 2) throw InputError("need at least 2 rows to fit a rescale map");
  if (binary.size() != static_cast<std::size_t>(raw.cols()))
    throw InputError("binary flag count does not match column count");
  if (!names.empty() && names.size() != binary.size())
    throw InputError("column name count does not match column count");
  RescaleMap map;
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    ColumnScale col;
    col.name = names.empty() ? "x" + std::to_string(c + 1) : names[static_cast<std::size_t>(c)];
    col.binary = binary[static_cast<std::size_t>(c)];
    const auto v = raw.col(c);
    if (!v.allFinite()) throw InputError("column '" + col.name + "' has non-finite values");
    if (col.binary) {
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (v(i) != 0.0 && v(i) != 1.0)
          throw InputError("binary column '" + col.name + "' has a value outside {0,1}");
      }
      col.min = 0.0;
      col.max = 1.0;
    } else {
      col.min = v.minCoeff();
      col.max = v.maxCoeff();
      if (!(col.max > col.min))
        throw InputError("continuous column '" + col.name + "' is constant");
    }
    map.columns.push_back(std::move(col));
  }
  if (map.continuous_count() == 0) throw InputError("at least one continuous column is required");
  return map;
}

ScaledCovariates apply_rescale(const RescaleMap& map, const Eigen::MatrixXd& raw) {
  if (raw.cols() != static_cast<Eigen::Index>(map.columns.size()))
    throw InputError("covariate count " + std::to_string(raw.cols()) + " does not match model (" +
                     std::to_string(map.columns.size()) + ")");
  ScaledCovariates out;
  out.X.resize(raw.rows(), map.continuous_count());
  out.B.resize(raw.rows(), map.binary_count());
  Eigen::Index xc = 0;
  Eigen::Index bc = 0;
  for (std::size_t c = 0; c < map.columns.size(); ++c) {
    const auto& col = map.columns[c];
    const auto v = raw.col(static_cast<Eigen::Index>(c));
    if (col.binary) {
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (v(i) != 0.0 && v(i) != 1.0)
          throw InputError("binary column '" + col.name + "' has a value outside {0,1}");
        out.B(i, bc) = v(i);
      }
      ++bc;
      continue;
    }
    const double span = col.max - col.min;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (!std::isfinite(v(i)))
        throw InputError("column '" + col.name + "' has non-finite values");
      double s = (v(i) - col.min) / span;
      if (s < 0.0 || s > 1.0) {
        s = std::clamp(s, 0.0, 1.0);
        ++out.clipped;
      }
      out.X(i, xc) = s;
    }
    ++xc;
  }
  return out;
}

Eigen::MatrixXd invert_rescale(const RescaleMap& map, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd raw(X.rows(), map.continuous_count());
  Eigen::Index xc = 0;
  for (const auto& col : map.columns) {
    if (col.binary) continue;
    raw.col(xc) = (X.col(xc).array() * (col.max - col.min) + col.min).matrix();
    ++xc;
  }
  return raw;
}

BasisDictionary binary_expand(const BasisDictionary& dict, const Eigen::MatrixXd& B) {
  if (B.cols() == 0) return dict;
  if (B.cols() > 63) throw InputError("at most 63 binary columns are supported");
  std::set<std::uint64_t> observed;
  for (Eigen::Index i = 0; i < B.rows(); ++i) {
    std::uint64_t mask = 0;
    for (Eigen::Index j = 0; j < B.cols(); ++j) {
      const double v = B(i, j);
      if (v != 0.0 && v != 1.0)
        throw InputError("binary column " + std::to_string(j + 1) + " has a value outside {0,1}");
      if (v == 1.0) mask |= std::uint64_t{1} << j;
    }
    observed.insert(mask);
  }
  // All u with u <= some observed b; other masks give identically zero columns.
  std::set<std::uint64_t> masks;
  for (auto b : observed) {
    for (std::uint64_t sub = b;; sub = (sub - 1) & b) {
      masks.insert(sub);
      if (masks.size() > 100000) throw InputError("too many binary indicator patterns");
      if (sub == 0) break;
    }
  }
  BasisDictionary out = dict;
  out.binary_columns = static_cast<int>(B.cols());
  out.terms.clear();
  out.terms.reserve(dict.terms.size() * masks.size());
  for (const auto& term : dict.terms) {
    for (auto u : masks) out.terms.push_back({term.index, u});
  }
  return out;
}

void DesignMatrix::push_column(const Eigen::VectorXd& values) {
  if (values.size() != rows_) throw InputError("design column length mismatch");
  Column col;
  Eigen::Index nnz = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i) nnz += values(i) != 0.0;
  col.sparse = static_cast<double>(nnz) < kSparseDensity * static_cast<double>(rows_);
  if (col.sparse) {
    col.index.reserve(static_cast<std::size_t>(nnz));
    col.value.reserve(static_cast<std::size_t>(nnz));
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      if (values(i) != 0.0) {
        col.index.push_back(i);
        col.value.push_back(values(i));
      }
    }
  } else {
    col.dense = values;
  }
  columns_.push_back(std::move(col));
}

double DesignMatrix::value(Eigen::Index i, Eigen::Index j) const {
  const auto& col = columns_[static_cast<std::size_t>(j)];
  if (!col.sparse) return col.dense(i);
  const auto it = std::lower_bound(col.index.begin(), col.index.end(), i);
  if (it == col.index.end() || *it != i) return 0.0;
  return col.value[static_cast<std::size_t>(it - col.index.begin())];
}

Eigen::VectorXd DesignMatrix::column(Eigen::Index j) const {
  const auto& col = columns_[static_cast<std::size_t>(j)];
  if (!col.sparse) return col.dense;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(rows_);
  for (std::size_t t = 0; t < col.index.size(); ++t) v(col.index[t]) = col.value[t];
  return v;
}

double DesignMatrix::dot(Eigen::Index j, const Eigen::VectorXd& v) const {
  const auto& col = columns_[static_cast<std::size_t>(j)];
  if (!col.sparse) return col.dense.dot(v);
  double s = 0.0;
  for (std::size_t t = 0; t < col.index.size(); ++t) s += col.value[t] * v(col.index[t]);
  return s;
}

double DesignMatrix::weighted_sq_norm(Eigen::Index j, const Eigen::VectorXd& w) const {
  const auto& col = columns_[static_cast<std::size_t>(j)];
  if (!col.sparse) return (col.dense.array().square() * w.array()).sum();
  double s = 0.0;
  for (std::size_t t = 0; t < col.index.size(); ++t)
    s += col.value[t] * col.value[t] * w(col.index[t]);
  return s;
}

void DesignMatrix::axpy(Eigen::Index j, double a, Eigen::VectorXd& v) const {
  const auto& col = columns_[static_cast<std::size_t>(j)];
  if (!col.sparse) {
    v.noalias() += a * col.dense;
    return;
  }
  for (std::size_t t = 0; t < col.index.size(); ++t) v(col.index[t]) += a * col.value[t];
}

void DesignMatrix::axpy_weighted(Eigen::Index j, double a, const Eigen::VectorXd& w,
                                 Eigen::VectorXd& v) const {
  const auto& col = columns_[static_cast<std::size_t>(j)];
  if (!col.sparse) {
    v.array() += a * w.array() * col.dense.array();
    return;
  }
  for (std::size_t t = 0; t < col.index.size(); ++t)
    v(col.index[t]) += a * w(col.index[t]) * col.value[t];
}

Eigen::VectorXd DesignMatrix::multiply(const Eigen::VectorXd& beta) const {
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(rows_);
  for (Eigen::Index j = 0; j < cols(); ++j) {
    if (beta(j) != 0.0) axpy(j, beta(j), eta);
  }
  return eta;
}

Eigen::VectorXd DesignMatrix::transpose_multiply(const Eigen::VectorXd& v) const {
  Eigen::VectorXd out(cols());
  for (Eigen::Index j = 0; j < cols(); ++j) out(j) = dot(j, v);
  return out;
}

Eigen::MatrixXd DesignMatrix::dense() const {
  Eigen::MatrixXd m(rows_, cols());
  for (Eigen::Index j = 0; j < cols(); ++j) m.col(j) = column(j);
  return m;
}

Eigen::MatrixXd DesignMatrix::dense(const std::vector<std::size_t>& cols) const {
  Eigen::MatrixXd m(rows_, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t t = 0; t < cols.size(); ++t)
    m.col(static_cast<Eigen::Index>(t)) = column(static_cast<Eigen::Index>(cols[t]));
  return m;
}

DesignMatrix DesignMatrix::select_rows(const std::vector<Eigen::Index>& rows) const {
  DesignMatrix out(static_cast<Eigen::Index>(rows.size()));
  Eigen::VectorXd v(static_cast<Eigen::Index>(rows.size()));
  for (Eigen::Index j = 0; j < cols(); ++j) {
    const auto& col = columns_[static_cast<std::size_t>(j)];
    if (col.sparse) {
      for (std::size_t t = 0; t < rows.size(); ++t) v(static_cast<Eigen::Index>(t)) = value(rows[t], j);
    } else {
      for (std::size_t t = 0; t < rows.size(); ++t) v(static_cast<Eigen::Index>(t)) = col.dense(rows[t]);
    }
    out.push_column(v);
  }
  return out;
}

DesignMatrix assemble(const BasisDictionary& dict, const Eigen::MatrixXd& X,
                      const Eigen::MatrixXd& B) {
  if (X.cols() != dict.d)
    throw InputError("design: expected " + std::to_string(dict.d) + " continuous columns, got " +
                     std::to_string(X.cols()));
  if (B.cols() != dict.binary_columns)
    throw InputError("design: expected " + std::to_string(dict.binary_columns) +
                     " binary columns, got " + std::to_string(B.cols()));
  if (B.rows() != X.rows() && B.cols() > 0) throw InputError("design: row count mismatch");
  const Eigen::Index n = X.rows();
  // Row-major copies give contiguous spans per observation.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> xr = X;
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> br = B;
  const auto p = dict.terms.size();
  std::vector<Eigen::VectorXd> cols(p);
  parallel_for(p, [&](std::size_t j) {
    Eigen::VectorXd v(n);
    const auto& term = dict.terms[j];
    for (Eigen::Index i = 0; i < n; ++i) {
      std::span<const double> x(xr.data() + i * xr.cols(), static_cast<std::size_t>(xr.cols()));
      std::span<const double> b(br.cols() > 0 ? br.data() + i * br.cols() : nullptr,
                                static_cast<std::size_t>(br.cols()));
      v(i) = eval_term(term, x, b);
    }
    cols[j] = std::move(v);
  });
  DesignMatrix m(n);
  for (auto& c : cols) m.push_column(c);
  return m;
}

}  // namespace halk
