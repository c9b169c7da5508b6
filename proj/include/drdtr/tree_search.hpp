#ifndef DRDTR_TREE_SEARCH_HPP_
#define DRDTR_TREE_SEARCH_HPP_

// Exact search over depth-0/1/2 axis-aligned trees maximizing the summed
// per-unit score of the assigned leaf action.
//
// Candidate thresholds for feature f are -inf, the midpoints between
// consecutive distinct values of f (over all rows), and +inf; index j < m+1
// sends the j lowest value groups left. Ties are broken by the lowest
// feature, then the lowest threshold, then the lowest leaf tuple, with nodes
// compared in breadth-first order.

#include "drdtr/policy.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

namespace drdtr {

/// Per-stage policy class: trees of a fixed depth, optionally restricted to
/// a subset of history columns. Depth 0 is the class of constant policies.
struct PolicyClass {
  int depth = 1;
  std::vector<std::size_t> features;  // empty: every history column

  friend bool operator==(const PolicyClass&, const PolicyClass&) = default;
};

struct TreeSearchResult {
  PolicyTree tree;
  double objective = 0.0;  // sum over units of scores(i, pi(H_i)), forced units included
};

namespace search_detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Distinct sorted values of every feature and the value group of each row.
struct FeatureGrid {
  std::vector<std::vector<double>> values;  // [f] distinct ascending
  std::vector<std::vector<int>> group;      // [f][i]

  explicit FeatureGrid(const Matrix& x) {
    const auto n = static_cast<std::size_t>(x.rows());
    const auto p = static_cast<std::size_t>(x.cols());
    values.resize(p);
    group.assign(p, std::vector<int>(n));
    for (std::size_t f = 0; f < p; ++f) {
      auto& v = values[f];
      v.reserve(n);
      for (std::size_t i = 0; i < n; ++i) v.push_back(x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)));
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
      for (std::size_t i = 0; i < n; ++i) {
        const double xi = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f));
        group[f][i] = static_cast<int>(std::lower_bound(v.begin(), v.end(), xi) - v.begin());
      }
    }
  }

  std::size_t num_features() const { return values.size(); }
  int num_groups(std::size_t f) const { return static_cast<int>(values[f].size()); }

  /// Threshold of index j in [0, m]: rows with group < j satisfy x < threshold.
  double threshold(std::size_t f, int j) const {
    const auto& v = values[f];
    const int m = static_cast<int>(v.size());
    if (j <= 0) return -kInf;
    if (j >= m) return kInf;
    const double lo = v[static_cast<std::size_t>(j - 1)];
    const double hi = v[static_cast<std::size_t>(j)];
    const double mid = lo / 2.0 + hi / 2.0;
    return (mid > lo && mid <= hi) ? mid : hi;
  }
};

/// Segment tree over value groups answering "largest prefix sum, leftmost
/// prefix length achieving it", with the empty prefix (length 0) included.
class PrefixMaxTree {
 public:
  void reset(int groups) {
    size_ = 1;
    while (size_ < std::max(groups, 1)) size_ *= 2;
    nodes_.assign(static_cast<std::size_t>(2 * size_), Node{});
    for (int g = 0; g < size_; ++g) nodes_[static_cast<std::size_t>(size_ + g)].arg = g + 1;
    for (int k = size_ - 1; k >= 1; --k) pull(k);
  }

  /// Sets every leaf from `sums` (length <= groups) and rebuilds.
  void assign(std::span<const double> sums) {
    for (int g = 0; g < size_; ++g) {
      auto& leaf = nodes_[static_cast<std::size_t>(size_ + g)];
      leaf.sum = leaf.best = g < static_cast<int>(sums.size()) ? sums[static_cast<std::size_t>(g)] : 0.0;
    }
    for (int k = size_ - 1; k >= 1; --k) pull(k);
  }

  void set(int g, double value) {
    int k = size_ + g;
    nodes_[static_cast<std::size_t>(k)].sum = value;
    nodes_[static_cast<std::size_t>(k)].best = value;
    for (k /= 2; k >= 1; k /= 2) pull(k);
  }

  double leaf(int g) const { return nodes_[static_cast<std::size_t>(size_ + g)].sum; }

  /// (max prefix sum, leftmost length), empty prefix preferred on ties.
  std::pair<double, int> best() const {
    const Node& r = nodes_[1];
    if (r.best > 0.0) return {r.best, r.arg};
    return {0.0, 0};
  }

 private:
  struct Node {
    double sum = 0.0;
    double best = 0.0;  // best non-empty prefix within the node
    int arg = 0;        // prefix end (exclusive group index) achieving best
  };

  void pull(int k) {
    const Node& l = nodes_[static_cast<std::size_t>(2 * k)];
    const Node& r = nodes_[static_cast<std::size_t>(2 * k + 1)];
    Node& n = nodes_[static_cast<std::size_t>(k)];
    n.sum = l.sum + r.sum;
    const double via_right = l.sum + r.best;
    if (l.best >= via_right) {
      n.best = l.best;
      n.arg = l.arg;
    } else {
      n.best = via_right;
      n.arg = r.arg;
    }
  }

  int size_ = 1;
  std::vector<Node> nodes_;
};

/// Best depth-1 tree over a subset of rows.
struct Stump {
  double value = 0.0;
  std::size_t feature = 0;
  int threshold_index = 0;
  int left = 0;
  int right = 0;
};

/// Lexicographic order on (feature, threshold index, left, right).
inline bool key_less(const Stump& a, const Stump& b) {
  if (a.feature != b.feature) return a.feature < b.feature;
  if (a.threshold_index != b.threshold_index) return a.threshold_index < b.threshold_index;
  if (a.left != b.left) return a.left < b.left;
  return a.right < b.right;
}

/// Depth-1 search state for one side of a root split. Rows can be inserted
/// and removed; every query is exact for the current membership.
class SideState {
 public:
  SideState(const FeatureGrid& grid, const Matrix& scores, std::span<const std::size_t> features)
      : grid_(grid), scores_(scores), features_(features.begin(), features.end()),
        d_(static_cast<int>(scores.cols())) {
    totals_.assign(static_cast<std::size_t>(d_), 0.0);
    counts_.resize(features_.size());
    trees_.resize(features_.size());
    for (std::size_t fi = 0; fi < features_.size(); ++fi) {
      const int m = grid_.num_groups(features_[fi]);
      counts_[fi].assign(static_cast<std::size_t>(m), 0);
      trees_[fi].resize(static_cast<std::size_t>(d_ * d_));
      for (auto& t : trees_[fi]) t.reset(m);
    }
  }

  /// Loads `rows` as the members, replacing the current contents.
  void load(std::span<const std::size_t> rows) {
    std::fill(totals_.begin(), totals_.end(), 0.0);
    for (auto i : rows)
      for (int a = 0; a < d_; ++a) totals_[static_cast<std::size_t>(a)] += score(i, a);
    std::vector<double> sums;
    for (std::size_t fi = 0; fi < features_.size(); ++fi) {
      const std::size_t f = features_[fi];
      const int m = grid_.num_groups(f);
      std::fill(counts_[fi].begin(), counts_[fi].end(), 0);
      for (auto i : rows) ++counts_[fi][static_cast<std::size_t>(grid_.group[f][i])];
      for (int l = 0; l < d_; ++l)
        for (int r = 0; r < d_; ++r) {
          if (l == r) continue;
          sums.assign(static_cast<std::size_t>(m), 0.0);
          for (auto i : rows) sums[static_cast<std::size_t>(grid_.group[f][i])] += score(i, l) - score(i, r);
          trees_[fi][pair(l, r)].assign(sums);
        }
    }
  }

  void insert(std::size_t i) { move(i, +1); }
  void remove(std::size_t i) { move(i, -1); }

  Stump best(double tol) const {
    Stump best_stump;
    bool have = false;
    for (std::size_t fi = 0; fi < features_.size(); ++fi) {
      for (int l = 0; l < d_; ++l) {
        for (int r = 0; r < d_; ++r) {
          Stump s;
          s.feature = fi;
          s.left = l;
          s.right = r;
          if (l == r) {
            s.value = totals_[static_cast<std::size_t>(l)];
            s.threshold_index = 0;
          } else {
            const auto [gain, j] = trees_[fi][pair(l, r)].best();
            s.value = gain + totals_[static_cast<std::size_t>(r)];
            s.threshold_index = j;
          }
          if (!have || s.value > best_stump.value + tol ||
              (s.value >= best_stump.value - tol && key_less(s, best_stump))) {
            best_stump = s;
            have = true;
          }
        }
      }
    }
    return best_stump;
  }

 private:
  double score(std::size_t i, int a) const { return scores_(static_cast<Eigen::Index>(i), a); }
  std::size_t pair(int l, int r) const { return static_cast<std::size_t>(l * d_ + r); }

  void move(std::size_t i, int sign) {
    for (int a = 0; a < d_; ++a) totals_[static_cast<std::size_t>(a)] += sign * score(i, a);
    for (std::size_t fi = 0; fi < features_.size(); ++fi) {
      const int g = grid_.group[features_[fi]][i];
      int& c = counts_[fi][static_cast<std::size_t>(g)];
      c += sign;
      for (int l = 0; l < d_; ++l)
        for (int r = 0; r < d_; ++r) {
          if (l == r) continue;
          auto& t = trees_[fi][pair(l, r)];
          // An empty group contributes exactly zero, whatever rounding the
          // insert/remove history left behind.
          t.set(g, c == 0 ? 0.0 : t.leaf(g) + sign * (score(i, l) - score(i, r)));
        }
    }
  }

  const FeatureGrid& grid_;
  const Matrix& scores_;
  std::vector<std::size_t> features_;
  int d_;
  std::vector<double> totals_;
  std::vector<std::vector<int>> counts_;              // [feature][group]
  std::vector<std::vector<PrefixMaxTree>> trees_;     // [feature][pair]
};

/// Odometer step over digits in [0, base), last digit fastest; false after
/// wrapping back to all zeros.
inline bool advance(std::vector<int>& digits, int base) {
  for (std::size_t k = digits.size(); k > 0; --k) {
    if (++digits[k - 1] < base) return true;
    digits[k - 1] = 0;
  }
  return false;
}

inline double tie_tolerance(const Matrix& scores, std::span<const std::size_t> rows) {
  double mass = 0.0;
  for (auto i : rows) mass += scores.row(static_cast<Eigen::Index>(i)).cwiseAbs().maxCoeff();
  return 1e-10 * (1.0 + mass);
}

}  // namespace search_detail

/// Sum over rows of scores(i, pi(H_i)) with forced actions applied; the sum
/// is taken in sorted order so it does not depend on row order.
inline double tree_objective(const PolicyTree& tree, const Matrix& scores, const Matrix& features,
                             const StageConstraint& constraint, std::span<const int> prior_actions) {
  std::vector<double> terms(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    std::optional<int> prior;
    if (!prior_actions.empty()) prior = prior_actions[static_cast<std::size_t>(i)];
    terms[static_cast<std::size_t>(i)] = scores(i, evaluate(tree, row_span(features, i), constraint, prior));
  }
  return order_free_sum(std::move(terms));
}

/// Exact maximizer of the summed score over depth-`depth` trees (depth <= 2).
/// Rows whose action is forced by `constraint` given their prior action keep
/// that action and do not influence the leaf choice.
inline TreeSearchResult exact_tree_search(const Matrix& scores, const Matrix& features, int depth,
                                          const StageConstraint& constraint = {},
                                          std::span<const int> prior_actions = {}, std::size_t stage = 0,
                                          std::span<const std::size_t> allowed_features = {}, int jobs = 1) {
  using namespace search_detail;
  if (scores.rows() == 0) throw Error("tree search: empty dataset");
  if (scores.rows() != features.rows()) throw Error("tree search: score and feature row counts differ");
  if (depth < 0 || depth > 2) throw Error("tree search: depth must be 0, 1 or 2");
  if (!prior_actions.empty() && prior_actions.size() != static_cast<std::size_t>(scores.rows()))
    throw Error("tree search: prior action count differs from row count");
  if (depth > 0 && features.cols() == 0) throw Error("tree search: no features to split on");

  std::vector<std::size_t> cols(allowed_features.begin(), allowed_features.end());
  std::sort(cols.begin(), cols.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
  if (cols.empty())
    for (Eigen::Index f = 0; f < features.cols(); ++f) cols.push_back(static_cast<std::size_t>(f));
  for (auto f : cols)
    if (f >= static_cast<std::size_t>(features.cols()))
      throw Error("tree search: feature index " + std::to_string(f) + " out of range");

  const int d = static_cast<int>(scores.cols());
  std::vector<std::size_t> free_rows;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    std::optional<int> prior;
    if (!prior_actions.empty()) prior = prior_actions[static_cast<std::size_t>(i)];
    if (!constraint.forced(prior)) free_rows.push_back(static_cast<std::size_t>(i));
  }
  const double tol = tie_tolerance(scores, free_rows);

  auto finish = [&](PolicyTree tree) {
    const double obj = tree_objective(tree, scores, features, constraint, prior_actions);
    return TreeSearchResult{std::move(tree), obj};
  };

  if (depth == 0) {
    std::vector<double> totals(static_cast<std::size_t>(d), 0.0);
    for (auto i : free_rows)
      for (int a = 0; a < d; ++a) totals[static_cast<std::size_t>(a)] += scores(static_cast<Eigen::Index>(i), a);
    int best = 0;
    for (int a = 1; a < d; ++a)
      if (totals[static_cast<std::size_t>(a)] > totals[static_cast<std::size_t>(best)] + tol) best = a;
    return finish(PolicyTree::constant(stage, best));
  }

  // Grid over the permitted columns only, so feature positions follow `cols`.
  Matrix sub(features.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) sub.col(static_cast<Eigen::Index>(c)) = features.col(static_cast<Eigen::Index>(cols[c]));
  const FeatureGrid grid(sub);
  std::vector<std::size_t> all_positions(cols.size());
  std::iota(all_positions.begin(), all_positions.end(), std::size_t{0});

  auto rule = [&](std::size_t pos, int j) { return SplitRule{cols[pos], grid.threshold(pos, j)}; };

  if (depth == 1) {
    SideState side(grid, scores, all_positions);
    side.load(free_rows);
    const Stump s = side.best(tol);
    return finish(PolicyTree(stage, 1, {rule(s.feature, s.threshold_index)}, {s.left, s.right}));
  }

  // Depth 2: for each root feature sweep its thresholds upward, moving value
  // groups from the right side to the left side.
  struct RootChoice {
    double value = -kInf;
    int threshold_index = 0;
    Stump left, right;
    bool valid = false;
  };
  std::vector<RootChoice> per_feature(cols.size());
  parallel_for(cols.size(), jobs, [&](std::size_t f) {
    SideState left(grid, scores, all_positions);
    SideState right(grid, scores, all_positions);
    right.load(free_rows);
    const int m = grid.num_groups(f);
    std::vector<std::vector<std::size_t>> by_group(static_cast<std::size_t>(m));
    for (auto i : free_rows) by_group[static_cast<std::size_t>(grid.group[f][i])].push_back(i);
    RootChoice best;
    for (int j = 0; j <= m; ++j) {
      if (j > 0) {
        const auto& moving = by_group[static_cast<std::size_t>(j - 1)];
        if (moving.empty()) continue;  // same partition as a lower threshold
        for (auto i : moving) {
          right.remove(i);
          left.insert(i);
        }
      }
      const Stump l = left.best(tol);
      const Stump r = right.best(tol);
      const double v = l.value + r.value;
      if (!best.valid || v > best.value + tol) best = {v, j, l, r, true};
    }
    per_feature[f] = best;
  });

  std::size_t root = 0;
  for (std::size_t f = 1; f < cols.size(); ++f)
    if (per_feature[f].value > per_feature[root].value + tol) root = f;
  const RootChoice& c = per_feature[root];
  return finish(PolicyTree(stage, 2,
                           {rule(root, c.threshold_index), rule(c.left.feature, c.left.threshold_index),
                            rule(c.right.feature, c.right.threshold_index)},
                           {c.left.left, c.left.right, c.right.left, c.right.right}));
}

/// Result of enumerating a finite policy class.
struct PolicyEnumeration {
  std::vector<PolicyTree> policies;  // duplicate-free, in enumeration order
  std::size_t raw_count = 0;         // candidates before removing duplicates
};

inline constexpr std::size_t kMaxEnumeratedPolicies = 1'000'000;

/// Every tree of the class over the candidate thresholds of `features`.
/// Candidates that assign the same action to every row of `features` are
/// duplicates; the first in (feature, threshold, leaves) order is kept.
inline PolicyEnumeration enumerate_policies(const PolicyClass& cls, std::size_t stage, const Matrix& features,
                                            int num_actions) {
  using namespace search_detail;
  if (cls.depth < 0 || cls.depth > 2) throw Error("enumerate_policies: depth must be 0, 1 or 2");
  if (num_actions < 1) throw Error("enumerate_policies: need at least one action");
  std::vector<std::size_t> cols = cls.features;
  std::sort(cols.begin(), cols.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
  if (cols.empty())
    for (Eigen::Index f = 0; f < features.cols(); ++f) cols.push_back(static_cast<std::size_t>(f));
  for (auto f : cols)
    if (f >= static_cast<std::size_t>(features.cols()))
      throw Error("enumerate_policies: feature index " + std::to_string(f) + " out of range");

  PolicyEnumeration out;
  const auto d = static_cast<std::size_t>(num_actions);
  if (cls.depth == 0) {
    out.raw_count = d;
    for (int a = 0; a < num_actions; ++a) out.policies.push_back(PolicyTree::constant(stage, a));
    return out;
  }
  if (cols.empty()) throw Error("enumerate_policies: no features to split on");

  Matrix sub(features.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) sub.col(static_cast<Eigen::Index>(c)) = features.col(static_cast<Eigen::Index>(cols[c]));
  const FeatureGrid grid(sub);
  std::vector<SplitRule> rules;
  for (std::size_t f = 0; f < cols.size(); ++f)
    for (int j = 0; j <= grid.num_groups(f); ++j) rules.push_back({cols[f], grid.threshold(f, j)});

  const std::size_t leaves = std::size_t{1} << cls.depth;
  const std::size_t internal = leaves - 1;
  // raw = |rules|^internal * d^leaves, computed with an overflow-safe guard.
  long double raw = 1.0L;
  for (std::size_t k = 0; k < internal; ++k) raw *= static_cast<long double>(rules.size());
  for (std::size_t k = 0; k < leaves; ++k) raw *= static_cast<long double>(d);
  if (raw > static_cast<long double>(kMaxEnumeratedPolicies))
    throw Error("enumerate_policies: class has " + std::to_string(static_cast<double>(raw)) +
                " candidates, above the limit of " + std::to_string(kMaxEnumeratedPolicies));
  out.raw_count = static_cast<std::size_t>(raw);

  std::vector<std::vector<int>> seen;  // sorted behaviour signatures
  auto add = [&](PolicyTree t) {
    std::vector<int> s(static_cast<std::size_t>(features.rows()));
    for (Eigen::Index i = 0; i < features.rows(); ++i) s[static_cast<std::size_t>(i)] = t(row_span(features, i));
    auto it = std::lower_bound(seen.begin(), seen.end(), s);
    if (it != seen.end() && *it == s) return;
    seen.insert(it, std::move(s));
    out.policies.push_back(std::move(t));
  };

  std::vector<int> node_idx(internal, 0);
  std::vector<int> leaf(leaves, 0);
  do {
    std::vector<SplitRule> nodes;
    for (int k : node_idx) nodes.push_back(rules[static_cast<std::size_t>(k)]);
    do {
      add(PolicyTree(stage, cls.depth, nodes, leaf));
    } while (search_detail::advance(leaf, num_actions));
  } while (search_detail::advance(node_idx, static_cast<int>(rules.size())));
  return out;
}

}  // namespace drdtr

#endif  // DRDTR_TREE_SEARCH_HPP_
