#pragma once

// Nested subset chains and the k-th order spline basis functions they index.
//
// A chain s_1 ⊇ s_2 ⊇ ... ⊇ s_{k+1} over coordinates {0..d-1} is stored as a
// per-coordinate membership depth: depth[l] = #{j : l ∈ s_j}. Nesting makes the
// depth vector a complete description, so s_j = {l : depth[l] >= j}.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace halk {

enum class RestrictionKind { full, max_interaction, edge_constant };

/// Submodel restriction applied when enumerating chains.
struct SubmodelRestriction {
  RestrictionKind kind = RestrictionKind::full;
  int max_order = 0;  // only for max_interaction: |s_1| <= max_order

  static SubmodelRestriction full() { return {}; }
  static SubmodelRestriction max_interaction(int p) {
    return {RestrictionKind::max_interaction, p};
  }
  static SubmodelRestriction edge_constant() {
    return {RestrictionKind::edge_constant, 0};
  }

  /// Accepts "full", "edge_constant" and "max_interaction:<p>".
  static SubmodelRestriction parse(const std::string& tag);
  std::string to_string() const;

  friend bool operator==(const SubmodelRestriction&,
                         const SubmodelRestriction&) = default;
};

class SubsetChain {
 public:
  SubsetChain() = default;

  /// depths[l] in {0..k+1}.
  static SubsetChain from_depths(std::vector<std::uint8_t> depths, int k);

  /// subsets has k+1 entries of 0-based coordinate indices below d. Validates
  /// nesting, ranges and duplicates.
  static SubsetChain from_subsets(const std::vector<std::vector<int>>& subsets,
                                  int d);

  int order() const { return k_; }
  int dimension() const { return static_cast<int>(depths_.size()); }
  const std::vector<std::uint8_t>& depths() const { return depths_; }

  /// s_j for j in 1..k+1, sorted ascending.
  std::vector<int> subset(int j) const;
  std::vector<std::vector<int>> subsets() const;

  /// Coordinates of s_{k+1}; these carry the knot.
  std::vector<int> spline_coordinates() const;
  bool has_spline_part() const;
  bool is_intercept() const;

  friend bool operator==(const SubsetChain&, const SubsetChain&) = default;
  friend auto operator<=>(const SubsetChain& a, const SubsetChain& b) {
    return a.depths_ <=> b.depths_;
  }

 private:
  int k_ = 0;
  std::vector<std::uint8_t> depths_;
};

/// Smallest m with s_{m+1} empty; k+1 when s_{k+1} is nonempty.
struct ChainDepth {
  int m = 0;
};
ChainDepth chain_depth(const SubsetChain& chain);

/// Identifies one basis function: a chain plus a knot over s_{k+1}.
struct BasisIndex {
  SubsetChain chain;
  std::vector<double> knot;  // ordered like chain.spline_coordinates()

  /// Throws InputError when the knot length or positivity is wrong.
  void validate() const;

  friend bool operator==(const BasisIndex&, const BasisIndex&) = default;
};

inline constexpr std::size_t kDefaultChainCap = 100000;

/// All chains admitted by the restriction, in lexicographic order of the
/// depth vector (so the intercept comes first). Throws InputError when
/// d * (k+2)^d exceeds cap.
std::vector<SubsetChain> enumerate_chains(
    int d, int k, const SubmodelRestriction& restriction,
    std::size_t cap = kDefaultChainCap);

bool restriction_admits(const SubmodelRestriction& restriction,
                        const SubsetChain& chain);

/// I(x >= u) for j = 0, (x - u)^j / j! I(x >= u) otherwise.
double eval_univariate_spline(int j, double u, double x);

double eval_tensor_spline(int j, std::span<const double> u,
                          std::span<const double> x);

/// Knot-zero polynomial prefactor: prod over j=1..k of prod over l in
/// s_j \ s_{j+1} of x_l^j / j!.
double eval_phibar(const SubsetChain& chain, std::span<const double> x);

double eval_basis(const BasisIndex& index, std::span<const double> x);

}  // namespace halk
