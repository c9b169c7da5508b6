#ifndef DRDTR_POLICY_HPP_
#define DRDTR_POLICY_HPP_

#include "drdtr/core.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace drdtr {

struct SplitRule {
  std::size_t feature = 0;
  double threshold = 0.0;  // go left iff x[feature] < threshold; may be +-infinity
  friend bool operator==(const SplitRule&, const SplitRule&) = default;
};

/// Complete axis-aligned binary tree of fixed depth over the stage history.
/// Nodes and leaves are stored in breadth-first order; node k has children
/// 2k+1 and 2k+2.
class PolicyTree {
 public:
  PolicyTree() : leaves_{0} {}

  PolicyTree(std::size_t stage, int depth, std::vector<SplitRule> nodes, std::vector<int> leaves)
      : stage_(stage), depth_(depth), nodes_(std::move(nodes)), leaves_(std::move(leaves)) {
    if (depth < 0) throw Error("policy tree: negative depth");
    const std::size_t leaf_count = std::size_t{1} << depth;
    if (nodes_.size() != leaf_count - 1 || leaves_.size() != leaf_count)
      throw Error("policy tree: depth " + std::to_string(depth) + " needs " +
                  std::to_string(leaf_count - 1) + " nodes and " + std::to_string(leaf_count) +
                  " leaves");
  }

  static PolicyTree constant(std::size_t stage, int action) {
    return PolicyTree(stage, 0, {}, {action});
  }

  std::size_t stage() const { return stage_; }
  int depth() const { return depth_; }
  const std::vector<SplitRule>& nodes() const { return nodes_; }
  const std::vector<int>& leaves() const { return leaves_; }

  std::size_t leaf_index(std::span<const double> h) const {
    std::size_t k = 0;
    for (int level = 0; level < depth_; ++level) {
      const SplitRule& r = nodes_[k];
      k = h[r.feature] < r.threshold ? 2 * k + 1 : 2 * k + 2;
    }
    return k - nodes_.size();
  }

  int operator()(std::span<const double> h) const { return leaves_[leaf_index(h)]; }

  /// Largest feature index used by a split, or -1 for constant trees.
  long max_feature() const {
    long m = -1;
    for (const auto& r : nodes_) m = std::max(m, static_cast<long>(r.feature));
    return m;
  }

  friend bool operator==(const PolicyTree&, const PolicyTree&) = default;

 private:
  std::size_t stage_ = 0;
  int depth_ = 0;
  std::vector<SplitRule> nodes_;
  std::vector<int> leaves_;
};

/// Feasibility rule tying a stage's action to the previous stage's action:
/// when the prior action is in `absorbing`, the policy must repeat it.
struct StageConstraint {
  enum class Kind { unconstrained, absorbing_start, absorbing_stop };
  Kind kind = Kind::unconstrained;
  std::vector<int> absorbing;

  static StageConstraint none() { return {}; }
  /// Optimal starting: once a non-zero arm is started it continues.
  static StageConstraint start(int arms) {
    StageConstraint c{Kind::absorbing_start, {}};
    for (int a = 1; a < arms; ++a) c.absorbing.push_back(a);
    return c;
  }
  /// Optimal stopping: once arm 0 (stop) is taken it continues.
  static StageConstraint stop() { return {Kind::absorbing_stop, {0}}; }

  std::optional<int> forced(std::optional<int> prior) const {
    if (kind == Kind::unconstrained || !prior) return std::nullopt;
    for (int a : absorbing)
      if (a == *prior) return a;
    return std::nullopt;
  }

  friend bool operator==(const StageConstraint&, const StageConstraint&) = default;
};

inline const char* to_string(StageConstraint::Kind k) {
  switch (k) {
    case StageConstraint::Kind::absorbing_start: return "absorbing_start";
    case StageConstraint::Kind::absorbing_stop: return "absorbing_stop";
    default: return "unconstrained";
  }
}

inline StageConstraint::Kind parse_constraint_kind(const std::string& s) {
  if (s == "unconstrained" || s.empty()) return StageConstraint::Kind::unconstrained;
  if (s == "absorbing_start") return StageConstraint::Kind::absorbing_start;
  if (s == "absorbing_stop") return StageConstraint::Kind::absorbing_stop;
  throw Error("unknown constraint '" + s + "'");
}

inline StageConstraint make_constraint(StageConstraint::Kind kind, int arms) {
  switch (kind) {
    case StageConstraint::Kind::absorbing_start: return StageConstraint::start(arms);
    case StageConstraint::Kind::absorbing_stop: return StageConstraint::stop();
    default: return StageConstraint::none();
  }
}

/// Tree traversal, overridden by the constraint's forced action when it applies.
inline int evaluate(const PolicyTree& policy, std::span<const double> h,
                    const StageConstraint& constraint, std::optional<int> prior_action) {
  if (auto f = constraint.forced(prior_action)) return *f;
  return policy(h);
}

/// Policy defined pointwise by a callable, e.g. argmax of fitted Q-functions.
/// Not serializable.
class PointwisePolicy {
 public:
  PointwisePolicy(std::size_t stage, std::function<int(std::span<const double>)> rule)
      : stage_(stage), rule_(std::move(rule)) {}
  std::size_t stage() const { return stage_; }
  int operator()(std::span<const double> h) const { return rule_(h); }

 private:
  std::size_t stage_;
  std::function<int(std::span<const double>)> rule_;
};

using StagePolicy = std::variant<PolicyTree, PointwisePolicy>;

/// Dynamic treatment regime: one policy and one constraint per stage.
struct Dtr {
  std::vector<StagePolicy> policies;
  std::vector<StageConstraint> constraints;

  Dtr() = default;
  explicit Dtr(std::vector<StagePolicy> p, std::vector<StageConstraint> c = {})
      : policies(std::move(p)), constraints(std::move(c)) {
    if (constraints.empty()) constraints.resize(policies.size());
    if (constraints.size() != policies.size()) throw Error("dtr: one constraint per stage required");
  }

  std::size_t num_stages() const { return policies.size(); }

  /// Action at `stage` for history h. The prior action is read from h: the
  /// history layout puts a_{t-1} in column t-1.
  int action(std::size_t stage, std::span<const double> h) const {
    std::optional<int> prior;
    if (stage > 0) prior = static_cast<int>(h[stage - 1]);
    if (auto f = constraints[stage].forced(prior)) return *f;
    return std::visit([&](const auto& p) { return p(h); }, policies[stage]);
  }

  const PolicyTree* tree(std::size_t stage) const { return std::get_if<PolicyTree>(&policies[stage]); }
};

/// Constant DTR (a_1, ..., a_T).
inline Dtr constant_dtr(std::span<const int> actions) {
  std::vector<StagePolicy> p;
  for (std::size_t t = 0; t < actions.size(); ++t) p.emplace_back(PolicyTree::constant(t, actions[t]));
  return Dtr(std::move(p));
}

/// Actions the DTR assigns at `stage` to the observed histories.
inline std::vector<int> policy_actions(const Dtr& dtr, std::size_t stage, const Matrix& histories) {
  std::vector<int> out(static_cast<std::size_t>(histories.rows()));
  for (Eigen::Index i = 0; i < histories.rows(); ++i)
    out[static_cast<std::size_t>(i)] = dtr.action(stage, row_span(histories, i));
  return out;
}

}  // namespace drdtr

#endif  // DRDTR_POLICY_HPP_
