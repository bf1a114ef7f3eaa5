#include "core/knots.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "core/error.hpp"

namespace halk {
namespace {

// Yields 0, 1, 1/2, 1/4, 3/4, 1/8, 3/8, ...
class DyadicTargets {
 public:
  double next() {
    if (emitted_ == 0) {
      ++emitted_;
      return 0.0;
    }
    if (emitted_ == 1) {
      ++emitted_;
      return 1.0;
    }
    if (numerator_ >= denominator_) {
      denominator_ *= 2;
      numerator_ = 1;
    }
    const double t = static_cast<double>(numerator_) / static_cast<double>(denominator_);
    numerator_ += 2;
    ++emitted_;
    return t;
  }

 private:
  long emitted_ = 0;
  long numerator_ = 1;
  long denominator_ = 2;
};

std::vector<double> joint_ranks(const std::vector<std::vector<double>>& points) {
  const std::size_t m = points.size();
  const std::size_t dims = points.front().size();
  std::vector<double> joint(m, 0.0);
  for (std::size_t c = 0; c < dims; ++c) {
    std::vector<double> values;
    values.reserve(m);
    for (const auto& p : points) values.push_back(p[c]);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    const double span = values.size() > 1 ? static_cast<double>(values.size() - 1) : 1.0;
    for (std::size_t i = 0; i < m; ++i) {
      const auto pos = std::lower_bound(values.begin(), values.end(), points[i][c]) -
                       values.begin();
      joint[i] += static_cast<double>(pos) / span;
    }
  }
  for (auto& v : joint) v /= static_cast<double>(dims);
  return joint;
}

std::vector<std::vector<double>> thin_by_rank(std::vector<std::vector<double>> points,
                                              std::size_t J) {
  const auto joint = joint_ranks(points);
  // Candidates ordered by joint rank; ties keep lexicographic order.
  std::vector<std::size_t> order(points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return joint[a] < joint[b]; });
  std::vector<double> sorted_rank(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) sorted_rank[i] = joint[order[i]];

  std::vector<bool> used(order.size(), false);
  std::vector<std::size_t> picked;
  DyadicTargets targets;
  while (picked.size() < J) {
    const double t = targets.next();
    const auto pos = static_cast<std::ptrdiff_t>(
        std::lower_bound(sorted_rank.begin(), sorted_rank.end(), t) - sorted_rank.begin());
    std::ptrdiff_t left = pos - 1;
    std::ptrdiff_t right = pos;
    const auto n = static_cast<std::ptrdiff_t>(sorted_rank.size());
    while (left >= 0 && used[static_cast<std::size_t>(left)]) --left;
    while (right < n && used[static_cast<std::size_t>(right)]) ++right;
    std::ptrdiff_t best;
    if (left < 0) {
      best = right;
    } else if (right >= n) {
      best = left;
    } else {
      const double dl = t - sorted_rank[static_cast<std::size_t>(left)];
      const double dr = sorted_rank[static_cast<std::size_t>(right)] - t;
      if (dl == dr) {
        best = order[static_cast<std::size_t>(left)] < order[static_cast<std::size_t>(right)]
                   ? left
                   : right;
      } else {
        best = dr < dl ? right : left;
      }
    }
    used[static_cast<std::size_t>(best)] = true;
    picked.push_back(order[static_cast<std::size_t>(best)]);
  }
  std::sort(picked.begin(), picked.end());
  std::vector<std::vector<double>> kept;
  kept.reserve(picked.size());
  for (auto i : picked) kept.push_back(std::move(points[i]));
  return kept;
}

}  // namespace

KnotSet data_support_knots(const Eigen::MatrixXd& X, const SubsetChain& chain,
                           std::size_t J) {
  if (J < 1) throw InputError("knot target size J must be >= 1");
  if (X.cols() != chain.dimension())
    throw InputError("covariate matrix width does not match chain dimension");
  const auto coords = chain.spline_coordinates();
  if (coords.empty()) throw InputError("chain has no spline coordinates");

  std::vector<std::vector<double>> candidates;
  candidates.reserve(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    std::vector<double> p;
    p.reserve(coords.size());
    bool zero = false;
    for (int c : coords) {
      const double v = X(i, c);
      if (!(v > 0.0)) zero = true;
      p.push_back(v);
    }
    if (!zero) candidates.push_back(std::move(p));
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  KnotSet out{chain, {}};
  if (candidates.size() > J) {
    out.points = thin_by_rank(std::move(candidates), J);
  } else {
    out.points = std::move(candidates);
  }
  return out;
}

std::size_t BasisDictionary::spline_term_count() const {
  return static_cast<std::size_t>(std::count_if(
      terms.begin(), terms.end(), [](const DictionaryTerm& t) { return !t.index.knot.empty(); }));
}

std::size_t BasisDictionary::intercept_index() const {
  for (std::size_t j = 0; j < terms.size(); ++j) {
    if (terms[j].binary_mask == 0 && terms[j].index.chain.is_intercept()) return j;
  }
  return terms.size();
}

BasisDictionary build_dictionary(const Eigen::MatrixXd& X, int k,
                                 const SubmodelRestriction& restriction,
                                 std::size_t j_max, std::size_t chain_cap) {
  if (X.rows() == 0) throw InputError("cannot build a dictionary from zero rows");
  if (j_max < 1) throw InputError("J_max must be >= 1");
  const int d = static_cast<int>(X.cols());
  const auto chains = enumerate_chains(d, k, restriction, chain_cap);

  // Knot sets depend only on s_{k+1}; cache by that coordinate set.
  std::map<std::vector<int>, std::vector<std::vector<double>>> cache;
  BasisDictionary dict;
  dict.k = k;
  dict.d = d;
  dict.restriction = restriction;
  dict.j_max = j_max;
  for (const auto& chain : chains) {
    if (!chain.has_spline_part()) {
      dict.terms.push_back({BasisIndex{chain, {}}, 0});
      continue;
    }
    const auto coords = chain.spline_coordinates();
    auto it = cache.find(coords);
    if (it == cache.end()) {
      it = cache.emplace(coords, data_support_knots(X, chain, j_max).points).first;
    }
    for (const auto& knot : it->second) dict.terms.push_back({BasisIndex{chain, knot}, 0});
  }
  return dict;
}

BasisDictionary add_terms(const BasisDictionary& dict, const std::vector<BasisIndex>& extra) {
  BasisDictionary out = dict;
  for (const auto& idx : extra) {
    if (idx.chain.order() != dict.k || idx.chain.dimension() != dict.d)
      throw InputError("extra basis index does not match the dictionary's k and d");
    idx.validate();
    const bool present = std::any_of(out.terms.begin(), out.terms.end(), [&](const DictionaryTerm& t) {
      return t.binary_mask == 0 && t.index == idx;
    });
    if (!present) out.terms.push_back({idx, 0});
  }
  std::stable_sort(out.terms.begin(), out.terms.end(),
                   [](const DictionaryTerm& a, const DictionaryTerm& b) {
                     if (a.index.chain != b.index.chain) return a.index.chain < b.index.chain;
                     if (a.index.knot != b.index.knot) return a.index.knot < b.index.knot;
                     return a.binary_mask < b.binary_mask;
                   });
  return out;
}

double eval_term(const DictionaryTerm& term, std::span<const double> x,
                 std::span<const double> b) {
  if (term.binary_mask != 0) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      if ((term.binary_mask >> j) & 1u) {
        if (!(b[j] >= 1.0)) return 0.0;
      }
    }
  }
  return eval_basis(term.index, x);
}

}  // namespace halk
