#ifndef DRDTR_DATASET_HPP_
#define DRDTR_DATASET_HPP_

#include "drdtr/core.hpp"
#include "drdtr/rng.hpp"

#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace drdtr {

// Stage indices in the C++ API are 0-based: stage 0 is the first decision
// point. File formats and printed reports use 1-based stage names (a1, s2_3).

/// Shape of a multi-stage panel: number of stages, arms per stage, state
/// dimension per stage and which stages record an outcome.
struct StageSchema {
  std::vector<int> actions_per_stage;
  std::vector<int> state_dims;
  std::vector<bool> outcome_present;

  std::size_t num_stages() const { return actions_per_stage.size(); }

  /// Uniform schema helper: T stages, `arms` arms each.
  static StageSchema uniform(std::size_t stages, int arms, std::vector<int> state_dims,
                             std::vector<bool> outcome_present) {
    return StageSchema{std::vector<int>(stages, arms), std::move(state_dims),
                       std::move(outcome_present)};
  }

  void validate() const {
    const std::size_t t = actions_per_stage.size();
    if (t == 0) throw Error("schema: at least one stage is required");
    if (state_dims.size() != t || outcome_present.size() != t)
      throw Error("schema: actions, state dims and outcome flags must all have " +
                  std::to_string(t) + " entries");
    for (std::size_t s = 0; s < t; ++s) {
      if (actions_per_stage[s] < 2)
        throw Error("schema: stage " + std::to_string(s + 1) + " needs at least 2 actions");
      if (state_dims[s] < 0)
        throw Error("schema: stage " + std::to_string(s + 1) + " has a negative state dimension");
    }
  }

  int max_actions() const {
    return *std::max_element(actions_per_stage.begin(), actions_per_stage.end());
  }

  /// Number of history columns at `stage`: previous actions plus all states so far.
  std::size_t history_width(std::size_t stage) const {
    std::size_t w = stage;
    for (std::size_t s = 0; s <= stage; ++s) w += static_cast<std::size_t>(state_dims[s]);
    return w;
  }

  friend bool operator==(const StageSchema&, const StageSchema&) = default;
};

/// Where a history column comes from.
struct HistoryColumn {
  enum class Kind { action, state };
  Kind kind;
  std::size_t stage;      // stage of the action or state block
  std::size_t component;  // index within the state vector (0 for actions)

  std::string name() const {
    if (kind == Kind::action) return "a" + std::to_string(stage + 1);
    return "s" + std::to_string(stage + 1) + "_" + std::to_string(component + 1);
  }
  friend bool operator==(const HistoryColumn&, const HistoryColumn&) = default;
};

/// Column layout of the history matrix at `stage`:
/// [a_1, ..., a_{t-1}, s_1 block, ..., s_t block].
inline std::vector<HistoryColumn> history_columns(const StageSchema& schema, std::size_t stage) {
  std::vector<HistoryColumn> cols;
  cols.reserve(schema.history_width(stage));
  for (std::size_t s = 0; s < stage; ++s) cols.push_back({HistoryColumn::Kind::action, s, 0});
  for (std::size_t s = 0; s <= stage; ++s)
    for (int j = 0; j < schema.state_dims[s]; ++j)
      cols.push_back({HistoryColumn::Kind::state, s, static_cast<std::size_t>(j)});
  return cols;
}

/// n units observed over T stages. Immutable once constructed.
class PanelDataset {
 public:
  PanelDataset() = default;

  /// actions[t][i], states[t] is n x state_dims[t], outcomes[t][i]. Outcomes of
  /// stages without a recorded outcome are forced to zero.
  PanelDataset(StageSchema schema, std::vector<std::string> unit_ids,
               std::vector<std::vector<int>> actions, std::vector<Matrix> states,
               std::vector<Vector> outcomes)
      : schema_(std::move(schema)),
        unit_ids_(std::move(unit_ids)),
        actions_(std::move(actions)),
        states_(std::move(states)),
        outcomes_(std::move(outcomes)) {
    validate();
    for (std::size_t t = 0; t < schema_.num_stages(); ++t)
      if (!schema_.outcome_present[t]) outcomes_[t].setZero();
  }

  const StageSchema& schema() const { return schema_; }
  std::size_t size() const { return unit_ids_.size(); }
  std::size_t num_stages() const { return schema_.num_stages(); }
  int num_actions(std::size_t stage) const { return schema_.actions_per_stage[stage]; }

  const std::string& unit_id(std::size_t i) const { return unit_ids_[i]; }
  const std::vector<std::string>& unit_ids() const { return unit_ids_; }
  int action(std::size_t stage, std::size_t i) const { return actions_[stage][i]; }
  const std::vector<int>& actions(std::size_t stage) const { return actions_[stage]; }
  const Matrix& states(std::size_t stage) const { return states_[stage]; }
  double outcome(std::size_t stage, std::size_t i) const { return outcomes_[stage](static_cast<Eigen::Index>(i)); }
  const Vector& outcomes(std::size_t stage) const { return outcomes_[stage]; }

  /// Sum of recorded outcomes of unit i from `from_stage` to the last stage.
  double outcome_sum(std::size_t i, std::size_t from_stage = 0) const {
    double s = 0.0;
    for (std::size_t t = from_stage; t < num_stages(); ++t) s += outcome(t, i);
    return s;
  }

  /// Rows selected by `units`, in that order.
  PanelDataset subset(std::span<const std::size_t> units) const {
    std::vector<std::string> ids;
    std::vector<std::vector<int>> acts(num_stages());
    std::vector<Matrix> sts(num_stages());
    std::vector<Vector> ys(num_stages());
    ids.reserve(units.size());
    for (auto i : units) ids.push_back(unit_ids_[i]);
    for (std::size_t t = 0; t < num_stages(); ++t) {
      sts[t].resize(static_cast<Eigen::Index>(units.size()), states_[t].cols());
      ys[t].resize(static_cast<Eigen::Index>(units.size()));
      for (std::size_t r = 0; r < units.size(); ++r) {
        acts[t].push_back(actions_[t][units[r]]);
        sts[t].row(static_cast<Eigen::Index>(r)) = states_[t].row(static_cast<Eigen::Index>(units[r]));
        ys[t](static_cast<Eigen::Index>(r)) = outcomes_[t](static_cast<Eigen::Index>(units[r]));
      }
    }
    return PanelDataset(schema_, std::move(ids), std::move(acts), std::move(sts), std::move(ys));
  }

 private:
  void validate() const {
    schema_.validate();
    const std::size_t n = unit_ids_.size();
    const std::size_t stages = schema_.num_stages();
    if (n == 0) throw Error("dataset: at least one unit is required");
    if (actions_.size() != stages || states_.size() != stages || outcomes_.size() != stages)
      throw Error("dataset: per-stage blocks do not match the schema's stage count");
    for (std::size_t t = 0; t < stages; ++t) {
      const std::string where = "stage " + std::to_string(t + 1);
      if (actions_[t].size() != n || static_cast<std::size_t>(outcomes_[t].size()) != n ||
          static_cast<std::size_t>(states_[t].rows()) != n)
        throw Error("dataset: " + where + " does not have " + std::to_string(n) + " rows");
      if (states_[t].cols() != schema_.state_dims[t])
        throw Error("dataset: " + where + " state has " + std::to_string(states_[t].cols()) +
                    " columns, schema declares " + std::to_string(schema_.state_dims[t]));
      for (std::size_t i = 0; i < n; ++i) {
        const int a = actions_[t][i];
        if (a < 0 || a >= schema_.actions_per_stage[t])
          throw Error("dataset: unit " + unit_ids_[i] + " has action " + std::to_string(a) +
                      " at " + where + ", outside [0, " +
                      std::to_string(schema_.actions_per_stage[t]) + ")");
      }
    }
  }

  StageSchema schema_;
  std::vector<std::string> unit_ids_;
  std::vector<std::vector<int>> actions_;
  std::vector<Matrix> states_;
  std::vector<Vector> outcomes_;
};

/// History vector of one unit at `stage` given its action and state prefixes.
/// `states[s]` must hold the stage-s state vector for s <= stage.
inline std::vector<double> history_row(const StageSchema& schema, std::size_t stage,
                                       std::span<const int> prior_actions,
                                       std::span<const std::span<const double>> states) {
  std::vector<double> h;
  h.reserve(schema.history_width(stage));
  for (std::size_t s = 0; s < stage; ++s) h.push_back(static_cast<double>(prior_actions[s]));
  for (std::size_t s = 0; s <= stage; ++s) h.insert(h.end(), states[s].begin(), states[s].end());
  return h;
}

/// n x p_t history matrix H_t with the column layout of history_columns().
inline Matrix history_features(const PanelDataset& data, std::size_t stage) {
  if (stage >= data.num_stages())
    throw Error("history_features: stage " + std::to_string(stage + 1) + " out of range");
  const auto n = static_cast<Eigen::Index>(data.size());
  Matrix h(n, static_cast<Eigen::Index>(data.schema().history_width(stage)));
  Eigen::Index col = 0;
  for (std::size_t s = 0; s < stage; ++s, ++col)
    for (Eigen::Index i = 0; i < n; ++i)
      h(i, col) = static_cast<double>(data.action(s, static_cast<std::size_t>(i)));
  for (std::size_t s = 0; s <= stage; ++s) {
    const Matrix& st = data.states(s);
    h.middleCols(col, st.cols()) = st;
    col += st.cols();
  }
  return h;
}

/// Cross-fitting partition of units into K folds.
struct FoldAssignment {
  std::vector<int> fold_of_unit;
  int num_folds = 0;
  std::uint64_t seed = 0;

  std::size_t size() const { return fold_of_unit.size(); }
  int fold(std::size_t i) const { return fold_of_unit[i]; }

  std::vector<std::size_t> members(int k) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of_unit.size(); ++i)
      if (fold_of_unit[i] == k) out.push_back(i);
    return out;
  }
  /// Units outside fold k: the training set of the fold-k models.
  std::vector<std::size_t> complement(int k) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of_unit.size(); ++i)
      if (fold_of_unit[i] != k) out.push_back(i);
    return out;
  }

  /// Fingerprint used to reject mixing nuisances built on different partitions.
  std::uint64_t signature() const {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ static_cast<std::uint64_t>(num_folds);
    for (int f : fold_of_unit) {
      h ^= static_cast<std::uint64_t>(f) + 1;
      h *= 0x100000001b3ULL;
    }
    return h == 0 ? 1 : h;
  }

  friend bool operator==(const FoldAssignment&, const FoldAssignment&) = default;
};

/// Shuffles unit indices with Rng(seed) and slices the permutation into K
/// contiguous blocks; the first n mod K folds receive one extra unit.
inline FoldAssignment make_folds(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw Error("make_folds: need at least 2 folds, got " + std::to_string(k));
  if (static_cast<std::size_t>(k) > n)
    throw Error("make_folds: " + std::to_string(k) + " folds requested for " + std::to_string(n) +
                " units");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(perm, rng);

  FoldAssignment out{std::vector<int>(n, 0), k, seed};
  const std::size_t base = n / static_cast<std::size_t>(k);
  const std::size_t extra = n % static_cast<std::size_t>(k);
  std::size_t pos = 0;
  for (int f = 0; f < k; ++f) {
    const std::size_t len = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
    for (std::size_t j = 0; j < len; ++j) out.fold_of_unit[perm[pos++]] = f;
  }
  return out;
}

}  // namespace drdtr

#endif  // DRDTR_DATASET_HPP_
