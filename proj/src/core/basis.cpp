#include "core/basis.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "core/error.hpp"

namespace halk {
namespace {

double factorial(int j) {
  double f = 1.0;
  for (int i = 2; i <= j; ++i) f *= static_cast<double>(i);
  return f;
}

}  // namespace

SubmodelRestriction SubmodelRestriction::parse(const std::string& tag) {
  if (tag == "full") return full();
  if (tag == "edge_constant" || tag == "edge-constant") return edge_constant();
  const std::string prefix = "max_interaction";
  if (tag.rfind(prefix, 0) == 0) {
    const std::string rest = tag.substr(prefix.size());
    if (rest.size() >= 2 && (rest[0] == ':' || rest[0] == '=')) {
      try {
        std::size_t used = 0;
        const int p = std::stoi(rest.substr(1), &used);
        if (used == rest.size() - 1 && p >= 0) return max_interaction(p);
      } catch (const std::exception&) {
      }
    }
  }
  throw InputError("unknown restriction '" + tag +
                   "' (expected full, edge_constant or max_interaction:<p>)");
}

std::string SubmodelRestriction::to_string() const {
  switch (kind) {
    case RestrictionKind::full:
      return "full";
    case RestrictionKind::edge_constant:
      return "edge_constant";
    case RestrictionKind::max_interaction:
      return "max_interaction:" + std::to_string(max_order);
  }
  return "full";
}

SubsetChain SubsetChain::from_depths(std::vector<std::uint8_t> depths, int k) {
  if (k < 0) throw InputError("spline order k must be >= 0");
  if (depths.empty()) throw InputError("chain dimension must be >= 1");
  for (auto v : depths) {
    if (v > k + 1) throw InputError("membership depth exceeds k+1");
  }
  SubsetChain c;
  c.k_ = k;
  c.depths_ = std::move(depths);
  return c;
}

SubsetChain SubsetChain::from_subsets(
    const std::vector<std::vector<int>>& subsets, int d) {
  if (subsets.empty()) throw InputError("a chain needs at least one subset");
  if (d < 1) throw InputError("chain dimension must be >= 1");
  const int k = static_cast<int>(subsets.size()) - 1;
  std::vector<std::set<int>> sets;
  for (const auto& s : subsets) {
    std::set<int> members;
    for (int l : s) {
      if (l < 0 || l >= d) throw InputError("chain coordinate out of range");
      if (!members.insert(l).second)
        throw InputError("duplicate coordinate in chain subset");
    }
    sets.push_back(std::move(members));
  }
  for (std::size_t j = 1; j < sets.size(); ++j) {
    if (!std::includes(sets[j - 1].begin(), sets[j - 1].end(), sets[j].begin(),
                       sets[j].end()))
      throw InputError("chain subsets are not nested");
  }
  std::vector<std::uint8_t> depths(static_cast<std::size_t>(d), 0);
  for (const auto& s : sets)
    for (int l : s) ++depths[static_cast<std::size_t>(l)];
  return from_depths(std::move(depths), k);
}

std::vector<int> SubsetChain::subset(int j) const {
  std::vector<int> out;
  for (std::size_t l = 0; l < depths_.size(); ++l)
    if (depths_[l] >= j) out.push_back(static_cast<int>(l));
  return out;
}

std::vector<std::vector<int>> SubsetChain::subsets() const {
  std::vector<std::vector<int>> out;
  for (int j = 1; j <= k_ + 1; ++j) out.push_back(subset(j));
  return out;
}

std::vector<int> SubsetChain::spline_coordinates() const {
  return subset(k_ + 1);
}

bool SubsetChain::has_spline_part() const {
  return std::any_of(depths_.begin(), depths_.end(),
                     [&](std::uint8_t v) { return v == k_ + 1; });
}

bool SubsetChain::is_intercept() const {
  return std::all_of(depths_.begin(), depths_.end(),
                     [](std::uint8_t v) { return v == 0; });
}

ChainDepth chain_depth(const SubsetChain& chain) {
  const auto& d = chain.depths();
  return {d.empty() ? 0 : static_cast<int>(*std::max_element(d.begin(), d.end()))};
}

void BasisIndex::validate() const {
  const auto coords = chain.spline_coordinates();
  if (knot.size() != coords.size())
    throw InputError("knot length does not match |s_{k+1}|");
  for (double u : knot) {
    if (!(u > 0.0)) throw InputError("knot entries must be strictly positive");
  }
}

bool restriction_admits(const SubmodelRestriction& restriction,
                        const SubsetChain& chain) {
  const auto& depths = chain.depths();
  const int k = chain.order();
  switch (restriction.kind) {
    case RestrictionKind::full:
      return true;
    case RestrictionKind::max_interaction: {
      const auto size = std::count_if(depths.begin(), depths.end(),
                                      [](std::uint8_t v) { return v > 0; });
      return size <= restriction.max_order;
    }
    case RestrictionKind::edge_constant: {
      // s_1 = ... = s_{k+1}  <=>  depths in {0, k+1};  s_2 empty  <=>  depths in {0, 1}.
      const bool all_equal = std::all_of(depths.begin(), depths.end(), [&](auto v) {
        return v == 0 || v == k + 1;
      });
      const bool second_empty = std::all_of(
          depths.begin(), depths.end(), [](auto v) { return v <= 1; });
      return all_equal || second_empty;
    }
  }
  return false;
}

std::vector<SubsetChain> enumerate_chains(int d, int k,
                                          const SubmodelRestriction& restriction,
                                          std::size_t cap) {
  if (d < 1) throw InputError("dimension d must be >= 1");
  if (k < 0) throw InputError("spline order k must be >= 0");
  const double base = static_cast<double>(k + 2);
  const double total = std::pow(base, d);
  if (static_cast<double>(d) * total > static_cast<double>(cap)) {
    throw InputError("chain enumeration too large: d*(k+2)^d = " +
                     std::to_string(static_cast<double>(d) * total) +
                     " exceeds cap " + std::to_string(cap));
  }
  std::vector<SubsetChain> chains;
  std::vector<std::uint8_t> depths(static_cast<std::size_t>(d), 0);
  // Odometer with the last coordinate varying fastest yields lexicographic order.
  for (;;) {
    auto chain = SubsetChain::from_depths(depths, k);
    if (restriction_admits(restriction, chain)) chains.push_back(std::move(chain));
    int pos = d - 1;
    while (pos >= 0 && depths[static_cast<std::size_t>(pos)] == k + 1) {
      depths[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++depths[static_cast<std::size_t>(pos)];
  }
  return chains;
}

double eval_univariate_spline(int j, double u, double x) {
  if (x < u) return 0.0;
  if (j == 0) return 1.0;
  const double t = x - u;
  double v = 1.0;
  for (int i = 0; i < j; ++i) v *= t;
  return v / factorial(j);
}

double eval_tensor_spline(int j, std::span<const double> u,
                          std::span<const double> x) {
  double v = 1.0;
  for (std::size_t l = 0; l < u.size(); ++l) v *= eval_univariate_spline(j, u[l], x[l]);
  return v;
}

double eval_phibar(const SubsetChain& chain, std::span<const double> x) {
  const auto& depths = chain.depths();
  const int k = chain.order();
  double v = 1.0;
  for (std::size_t l = 0; l < depths.size(); ++l) {
    const int j = depths[l];
    if (j >= 1 && j <= k) v *= eval_univariate_spline(j, 0.0, x[l]);
  }
  return v;
}

double eval_basis(const BasisIndex& index, std::span<const double> x) {
  double v = eval_phibar(index.chain, x);
  if (v == 0.0 || index.knot.empty()) return v;
  const auto& depths = index.chain.depths();
  const int top = index.chain.order() + 1;
  std::size_t slot = 0;
  for (std::size_t l = 0; l < depths.size(); ++l) {
    if (depths[l] == top) {
      v *= eval_univariate_spline(index.chain.order(), index.knot[slot++], x[l]);
    }
  }
  return v;
}

}  // namespace halk
