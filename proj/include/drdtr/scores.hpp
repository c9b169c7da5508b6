#ifndef DRDTR_SCORES_HPP_
#define DRDTR_SCORES_HPP_

#include "drdtr/csv.hpp"
#include "drdtr/nuisance.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <string>

namespace drdtr {

/// n x d_t matrix whose entry (i, a) scores action a for unit i at `stage`.
struct ScoreMatrix {
  enum class Kind { aipw, ipw, oracle_aipw };
  std::size_t stage = 0;
  Matrix values;
  Kind kind = Kind::aipw;
  std::uint64_t fold_signature = 0;  // 0 for oracle scores
};

inline const char* to_string(ScoreMatrix::Kind k) {
  switch (k) {
    case ScoreMatrix::Kind::ipw: return "ipw";
    case ScoreMatrix::Kind::oracle_aipw: return "oracle_aipw";
    default: return "aipw";
  }
}

/// values(i, a) = (U_i - Q(i, A_i)) / e_i * 1{A_i = a} + Q(i, a), where e_i is
/// the propensity of the observed action. Every entry is checked to be finite
/// and within (max|U| + max|Q|) / min e + max|Q|.
inline ScoreMatrix aipw_scores(std::size_t stage, std::span<const double> pseudo_outcome,
                               std::span<const int> actions, const Matrix& q, std::span<const double> e_observed,
                               ScoreMatrix::Kind kind = ScoreMatrix::Kind::aipw, std::uint64_t fold_signature = 0) {
  const auto n = static_cast<std::size_t>(q.rows());
  if (pseudo_outcome.size() != n || actions.size() != n || e_observed.size() != n)
    throw Error("aipw scores: input lengths differ");
  ScoreMatrix out{stage, q, kind, fold_signature};
  double max_u = 0.0, min_e = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = e_observed[i];
    if (!(e > 0.0)) throw Error("aipw scores: non-positive propensity at the observed action of row " + std::to_string(i + 1));
    const auto r = static_cast<Eigen::Index>(i);
    out.values(r, actions[i]) += (pseudo_outcome[i] - q(r, actions[i])) / e;
    max_u = std::max(max_u, std::abs(pseudo_outcome[i]));
    min_e = std::min(min_e, e);
  }
  const double max_q = n ? q.cwiseAbs().maxCoeff() : 0.0;
  const double bound = (max_u + max_q) / min_e + max_q;
  for (std::size_t i = 0; i < n; ++i)
    for (Eigen::Index a = 0; a < q.cols(); ++a) {
      const double v = out.values(static_cast<Eigen::Index>(i), a);
      if (!std::isfinite(v) || std::abs(v) > bound * (1.0 + 1e-12))
        throw Error("aipw scores: entry (" + std::to_string(i + 1) + ", " + std::to_string(a) +
                    ") is not finite or exceeds the weight bound");
    }
  return out;
}

namespace scores_detail {

inline std::vector<double> observed_propensities(const PanelDataset& data, const PropensityModels& props,
                                                 std::size_t stage) {
  std::vector<double> e(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) e[i] = props.at(stage, i, data.action(stage, i));
  return e;
}

inline void require_same_folds(std::uint64_t a, std::uint64_t b, const char* what) {
  if (a != b) throw Error(std::string("scores: ") + what + " were built on a different fold assignment");
}

}  // namespace scores_detail

/// Final-stage scores from cross-fitted propensities and Q_T.
inline ScoreMatrix aipw_scores_final(const PanelDataset& data, const FoldAssignment& folds,
                                     const PropensityModels& props, const QModels& q_final) {
  const std::size_t last = data.num_stages() - 1;
  if (q_final.stage != last) throw Error("aipw scores: Q models are not for the last stage");
  scores_detail::require_same_folds(props.fold_signature, folds.signature(), "propensities");
  scores_detail::require_same_folds(q_final.fold_signature, folds.signature(), "Q models");
  const Matrix q = q_final.in_sample(history_features(data, last), folds);
  std::vector<double> u(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) u[i] = data.outcome(last, i);
  return aipw_scores(last, u, data.actions(last), q, scores_detail::observed_propensities(data, props, last),
                     ScoreMatrix::Kind::aipw, folds.signature());
}

/// Pseudo-outcome U_i = Y_{i,t} + next(i, pi_{t+1}(H_{i,t+1})).
inline std::vector<double> pseudo_outcomes(const PanelDataset& data, std::size_t stage, const ScoreMatrix& next,
                                           const Dtr& policy) {
  if (next.stage != stage + 1) throw Error("scores: next-stage scores belong to the wrong stage");
  const Matrix hn = history_features(data, stage + 1);
  std::vector<double> u(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto h = row_span(hn, static_cast<Eigen::Index>(i));
    u[i] = data.outcome(stage, i) + next.values(static_cast<Eigen::Index>(i), policy.action(stage + 1, h));
  }
  return u;
}

/// Stage-t scores Gamma_{i,t}(a) built on the next stage's scores and policy.
inline ScoreMatrix aipw_scores_stage(const PanelDataset& data, const FoldAssignment& folds, const QModels& q,
                                     const PropensityModels& props, const ScoreMatrix& next, const Dtr& policy) {
  const std::size_t stage = q.stage;
  if (stage + 1 >= data.num_stages()) throw Error("aipw scores: stage has no successor");
  scores_detail::require_same_folds(props.fold_signature, folds.signature(), "propensities");
  scores_detail::require_same_folds(q.fold_signature, folds.signature(), "Q models");
  scores_detail::require_same_folds(next.fold_signature, folds.signature(), "next-stage scores");
  const auto u = pseudo_outcomes(data, stage, next, policy);
  const Matrix qm = q.in_sample(history_features(data, stage), folds);
  return aipw_scores(stage, u, data.actions(stage), qm, scores_detail::observed_propensities(data, props, stage),
                     ScoreMatrix::Kind::aipw, folds.signature());
}

/// Inverse-propensity scores: cumulative outcome from `stage` on, kept only
/// when every later action agrees with the policy, divided by the product of
/// observed-action propensities from `stage` on.
inline ScoreMatrix ipw_scores(const PanelDataset& data, const FoldAssignment& folds, const PropensityModels& props,
                              const Dtr& policy, std::size_t stage) {
  if (stage >= data.num_stages()) throw Error("ipw scores: stage out of range");
  scores_detail::require_same_folds(props.fold_signature, folds.signature(), "propensities");
  const std::size_t stages = data.num_stages();
  const auto n = static_cast<Eigen::Index>(data.size());
  ScoreMatrix out{stage, Matrix::Zero(n, data.num_actions(stage)), ScoreMatrix::Kind::ipw, folds.signature()};
  std::vector<Matrix> histories;
  for (std::size_t s = stage + 1; s < stages; ++s) histories.push_back(history_features(data, s));
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto i = static_cast<std::size_t>(r);
    bool follows = true;
    for (std::size_t s = stage + 1; s < stages && follows; ++s)
      follows = data.action(s, i) == policy.action(s, row_span(histories[s - stage - 1], r));
    if (!follows) continue;
    double weight = 1.0;
    for (std::size_t s = stage; s < stages; ++s) weight *= props.at(s, i, data.action(s, i));
    const double v = data.outcome_sum(i, stage) / weight;
    if (!std::isfinite(v)) throw Error("ipw scores: non-finite score in row " + std::to_string(i + 1));
    out.values(r, data.action(stage, i)) = v;
  }
  return out;
}

/// AIPW scores with the true nuisances. `next` is null at the last stage.
inline ScoreMatrix oracle_aipw_scores(const PanelDataset& data, const NuisanceOracle& oracle, const Dtr& policy,
                                      std::size_t stage, const ScoreMatrix* next) {
  const std::size_t last = data.num_stages() - 1;
  if (stage > last) throw Error("oracle scores: stage out of range");
  std::vector<double> u(data.size());
  if (stage == last) {
    for (std::size_t i = 0; i < data.size(); ++i) u[i] = data.outcome(stage, i);
  } else {
    if (next == nullptr) throw Error("oracle scores: next-stage scores are required before the last stage");
    u = pseudo_outcomes(data, stage, *next, policy);
  }
  const Matrix h = history_features(data, stage);
  const int d = data.num_actions(stage);
  Matrix q(h.rows(), d);
  std::vector<double> e(data.size());
  for (Eigen::Index r = 0; r < h.rows(); ++r) {
    const auto hi = row_span(h, r);
    for (int a = 0; a < d; ++a) q(r, a) = oracle.q(stage, hi, a, policy);
    e[static_cast<std::size_t>(r)] = oracle.propensity(stage, hi, data.action(stage, static_cast<std::size_t>(r)));
  }
  return aipw_scores(stage, u, data.actions(stage), q, e, ScoreMatrix::Kind::oracle_aipw, 0);
}

/// Debug dump: unit_id, score_a0, ..., score_a{d-1}.
inline void write_scores_csv(std::ostream& out, const PanelDataset& data, const ScoreMatrix& scores) {
  out << "unit_id";
  for (Eigen::Index a = 0; a < scores.values.cols(); ++a) out << ",score_a" << a;
  out << '\n';
  for (Eigen::Index r = 0; r < scores.values.rows(); ++r) {
    out << data.unit_id(static_cast<std::size_t>(r));
    for (Eigen::Index a = 0; a < scores.values.cols(); ++a) out << ',' << format_number(scores.values(r, a));
    out << '\n';
  }
}

inline void write_scores_csv(const std::string& path, const PanelDataset& data, const ScoreMatrix& scores) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  write_scores_csv(out, data, scores);
}

}  // namespace drdtr

#endif  // DRDTR_SCORES_HPP_
