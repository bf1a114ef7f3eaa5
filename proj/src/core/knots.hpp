#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "core/basis.hpp"

namespace halk {

/// Knot points for one chain, each over the coordinates of s_{k+1}.
struct KnotSet {
  SubsetChain chain;
  std::vector<std::vector<double>> points;  // deduplicated, lexicographic
};

/// Observed subvectors X_i(s_{k+1}) as knot candidates. Subvectors with a zero
/// coordinate are excluded. When more than J candidates remain they are
/// thinned by joint marginal rank: candidates are ranked per coordinate, the
/// mean normalised rank is the joint rank, and rank targets are visited in
/// dyadic refinement order (0, 1, 1/2, 1/4, 3/4, ...) keeping the nearest
/// unused candidate for each. The first J picks are kept, so the set for a
/// smaller J is always contained in the set for a larger J.
KnotSet data_support_knots(const Eigen::MatrixXd& X, const SubsetChain& chain,
                           std::size_t J);

/// One dictionary entry: a basis index, optionally multiplied by the binary
/// indicator I(b >= u) where u is given by the set bits of binary_mask.
struct DictionaryTerm {
  BasisIndex index;
  std::uint64_t binary_mask = 0;

  friend bool operator==(const DictionaryTerm&, const DictionaryTerm&) = default;
};

/// Ordered list of basis functions spanning a working model.
struct BasisDictionary {
  int k = 0;
  int d = 0;                 // continuous coordinates
  int binary_columns = 0;    // binary coordinates
  SubmodelRestriction restriction;
  std::size_t j_max = 0;
  std::vector<DictionaryTerm> terms;

  std::size_t size() const { return terms.size(); }
  /// Number of terms that carry a knot (|s_{k+1}| > 0).
  std::size_t spline_term_count() const;
  /// Index of the intercept term (all-empty chain, no binary factor), or
  /// size() when absent.
  std::size_t intercept_index() const;
};

/// Working model R^k(d, J_max) on rescaled continuous covariates X.
BasisDictionary build_dictionary(const Eigen::MatrixXd& X, int k,
                                 const SubmodelRestriction& restriction,
                                 std::size_t j_max,
                                 std::size_t chain_cap = kDefaultChainCap);

/// Adds the given indices (if missing) and restores canonical order: chains
/// in enumeration order, knots lexicographic within a chain.
BasisDictionary add_terms(const BasisDictionary& dict, const std::vector<BasisIndex>& extra);

/// Evaluates one dictionary term at continuous point x and binary point b.
double eval_term(const DictionaryTerm& term, std::span<const double> x,
                 std::span<const double> b);

}  // namespace halk
