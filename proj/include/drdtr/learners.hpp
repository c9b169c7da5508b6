#ifndef DRDTR_LEARNERS_HPP_
#define DRDTR_LEARNERS_HPP_

#include "drdtr/nuisance.hpp"
#include "drdtr/policy.hpp"
#include "drdtr/scores.hpp"
#include "drdtr/tree_search.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace drdtr {

enum class Method { dr, q_learn, q_search, ipw, aipw_simultaneous };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::dr: return "dr";
    case Method::q_learn: return "q_learn";
    case Method::q_search: return "q_search";
    case Method::ipw: return "ipw";
    default: return "aipw_simultaneous";
  }
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::dr, Method::q_learn, Method::q_search, Method::ipw, Method::aipw_simultaneous})
    if (s == to_string(m)) return m;
  throw Error("unknown method '" + s + "' (expected dr, q_learn, q_search, ipw or aipw_simultaneous)");
}

inline constexpr std::size_t kMaxSimultaneousDtrs = 100'000;

struct LearnerConfig {
  Method method = Method::dr;
  int folds = 5;
  double eta = 0.01;
  RegressorSpec propensity;
  RegressorSpec q;
  std::vector<PolicyClass> classes;             // one per stage
  std::vector<StageConstraint> constraints;     // one per stage; empty means unconstrained
  std::uint64_t seed = 0;
  int jobs = 1;
  std::optional<NuisanceOracle> oracle;         // true nuisances replace the fitted ones

  void validate(const StageSchema& schema) const {
    if (folds < 2) throw Error("learner: K must be at least 2");
    if (!(eta > 0.0 && eta < 0.5)) throw Error("learner: eta must lie in (0, 0.5)");
    if (classes.size() != schema.num_stages())
      throw Error("learner: " + std::to_string(schema.num_stages()) + " stage policy classes required, got " +
                  std::to_string(classes.size()));
    if (!constraints.empty() && constraints.size() != schema.num_stages())
      throw Error("learner: one constraint per stage required");
    propensity.validate();
    q.validate();
  }
};

struct LearnResult {
  Dtr dtr;
  std::vector<double> objectives;  // per stage: (1/n) sum_i score(i, pi_t(H_i)); simultaneous: estimated welfare
  std::vector<std::string> warnings;
  std::vector<std::vector<double>> q_training_r2;  // [stage][fold], diagnostic only
};

namespace learner_detail {

inline std::vector<StageConstraint> constraints_of(const LearnerConfig& cfg, std::size_t stages) {
  return cfg.constraints.empty() ? std::vector<StageConstraint>(stages) : cfg.constraints;
}

/// Placeholder DTR whose stage policies are overwritten as the backward pass proceeds.
inline Dtr initial_dtr(const LearnerConfig& cfg, std::size_t stages) {
  std::vector<StagePolicy> p;
  for (std::size_t t = 0; t < stages; ++t) p.emplace_back(PolicyTree::constant(t, 0));
  return Dtr(std::move(p), constraints_of(cfg, stages));
}

inline std::uint64_t component_seed(std::uint64_t seed, const char* what) {
  return derive_seed(seed, {label_tag(what)});
}

inline RegressorSpec seeded(RegressorSpec spec, std::uint64_t seed, const char* what) {
  spec.forest.seed = component_seed(seed, what);
  return spec;
}

inline std::vector<int> prior_actions(const PanelDataset& data, std::size_t stage) {
  return stage == 0 ? std::vector<int>{} : data.actions(stage - 1);
}

inline TreeSearchResult search_stage(const PanelDataset& data, const LearnerConfig& cfg, const Dtr& dtr,
                                     const Matrix& scores, std::size_t stage) {
  const Matrix h = history_features(data, stage);
  const auto prior = prior_actions(data, stage);
  const auto& cls = cfg.classes[stage];
  return exact_tree_search(scores, h, cls.depth, dtr.constraints[stage], prior, stage, cls.features, cfg.jobs);
}

inline Matrix oracle_q_matrix(const PanelDataset& data, const NuisanceOracle& oracle, const Dtr& policy,
                              std::size_t stage) {
  const Matrix h = history_features(data, stage);
  Matrix q(h.rows(), data.num_actions(stage));
  for (Eigen::Index i = 0; i < h.rows(); ++i)
    for (int a = 0; a < q.cols(); ++a) q(i, a) = oracle.q(stage, row_span(h, i), a, policy);
  return q;
}

}  // namespace learner_detail

inline FoldAssignment learner_folds(const PanelDataset& data, const LearnerConfig& cfg) {
  return make_folds(data.size(), cfg.folds, learner_detail::component_seed(cfg.seed, "folds"));
}

inline PropensityModels learner_propensities(const PanelDataset& data, const FoldAssignment& folds,
                                             const LearnerConfig& cfg) {
  return fit_propensities(data, folds, learner_detail::seeded(cfg.propensity, cfg.seed, "propensity"), cfg.eta,
                          cfg.jobs);
}

/// Doubly robust backward induction: at each stage from last to first, fit
/// Q_t for the already learned future policies, build AIPW scores and pick
/// the best tree of the stage class.
inline LearnResult learn_dr(const PanelDataset& data, const LearnerConfig& cfg, const FoldAssignment& folds) {
  using namespace learner_detail;
  cfg.validate(data.schema());
  const std::size_t stages = data.num_stages();
  const double n = static_cast<double>(data.size());
  LearnResult out;
  out.dtr = initial_dtr(cfg, stages);
  out.objectives.assign(stages, 0.0);
  out.q_training_r2.resize(stages);

  std::optional<PropensityModels> props;
  if (!cfg.oracle) {
    props = learner_propensities(data, folds, cfg);
    out.warnings = props->warnings;
  }
  const RegressorSpec q_spec = seeded(cfg.q, cfg.seed, "q");
  std::optional<QModels> q_next;
  std::optional<ScoreMatrix> next;
  for (std::size_t t = stages; t-- > 0;) {
    ScoreMatrix scores;
    if (cfg.oracle) {
      scores = oracle_aipw_scores(data, *cfg.oracle, out.dtr, t, next ? &*next : nullptr);
    } else {
      QModels q = fitted_q_evaluation(data, folds, out.dtr, t, q_spec, q_next ? &*q_next : nullptr, cfg.jobs);
      out.q_training_r2[t] = q.training_r2;
      scores = t + 1 == stages ? aipw_scores_final(data, folds, *props, q)
                               : aipw_scores_stage(data, folds, q, *props, *next, out.dtr);
      q_next = std::move(q);
    }
    const auto found = search_stage(data, cfg, out.dtr, scores.values, t);
    out.dtr.policies[t] = found.tree;
    out.objectives[t] = found.objective / n;
    next = std::move(scores);
  }
  return out;
}

inline LearnResult learn_dr(const PanelDataset& data, const LearnerConfig& cfg) {
  return learn_dr(data, cfg, learner_folds(data, cfg));
}

/// Argmax over actions of the fold-averaged Q models; lowest action on ties.
inline PointwisePolicy q_argmax_policy(std::shared_ptr<const QModels> q) {
  const std::size_t stage = q->stage;
  return PointwisePolicy(stage, [q = std::move(q)](std::span<const double> h) {
    int best = 0;
    double best_value = 0.0;
    for (int a = 0; a < q->num_actions; ++a) {
      double v = 0.0;
      for (std::size_t k = 0; k < q->per_fold.size(); ++k) v += q->predict(static_cast<int>(k), h, a);
      v /= static_cast<double>(q->per_fold.size());
      if (a == 0 || v > best_value) {
        best = a;
        best_value = v;
      }
    }
    return best;
  });
}

/// Argmax over actions of the true Q given the future policies in `future`.
inline PointwisePolicy oracle_argmax_policy(const NuisanceOracle& oracle, const Dtr& future, std::size_t stage,
                                            int num_actions) {
  return PointwisePolicy(stage, [oracle, future, stage, num_actions](std::span<const double> h) {
    int best = 0;
    double best_value = 0.0;
    for (int a = 0; a < num_actions; ++a) {
      const double v = oracle.q(stage, h, a, future);
      if (a == 0 || v > best_value) {
        best = a;
        best_value = v;
      }
    }
    return best;
  });
}

/// Backward recursion on fitted Q alone. With policy search each stage picks
/// the tree maximizing summed predicted Q; without it the stage policy is the
/// pointwise argmax of the fitted Q models.
inline LearnResult learn_q(const PanelDataset& data, const LearnerConfig& cfg, const FoldAssignment& folds,
                           bool with_policy_search) {
  using namespace learner_detail;
  cfg.validate(data.schema());
  const std::size_t stages = data.num_stages();
  const double n = static_cast<double>(data.size());
  LearnResult out;
  out.dtr = initial_dtr(cfg, stages);
  out.objectives.assign(stages, 0.0);
  out.q_training_r2.resize(stages);
  const RegressorSpec q_spec = seeded(cfg.q, cfg.seed, "q");
  std::shared_ptr<const QModels> q_next;
  for (std::size_t t = stages; t-- > 0;) {
    Matrix qm;
    if (cfg.oracle) {
      qm = oracle_q_matrix(data, *cfg.oracle, out.dtr, t);
    } else {
      auto q = std::make_shared<const QModels>(
          fitted_q_evaluation(data, folds, out.dtr, t, q_spec, q_next.get(), cfg.jobs));
      out.q_training_r2[t] = q->training_r2;
      qm = q->in_sample(history_features(data, t), folds);
      q_next = q;
    }
    if (with_policy_search) {
      const auto found = search_stage(data, cfg, out.dtr, qm, t);
      out.dtr.policies[t] = found.tree;
      out.objectives[t] = found.objective / n;
    } else {
      if (cfg.oracle) out.dtr.policies[t] = oracle_argmax_policy(*cfg.oracle, out.dtr, t, data.num_actions(t));
      else out.dtr.policies[t] = q_argmax_policy(q_next);
      const auto acts = policy_actions(out.dtr, t, history_features(data, t));
      double s = 0.0;
      for (std::size_t i = 0; i < data.size(); ++i) s += qm(static_cast<Eigen::Index>(i), acts[i]);
      out.objectives[t] = s / n;
    }
  }
  return out;
}

inline LearnResult learn_q(const PanelDataset& data, const LearnerConfig& cfg, bool with_policy_search) {
  return learn_q(data, cfg, learner_folds(data, cfg), with_policy_search);
}

/// Backward recursion on inverse-propensity scores.
inline LearnResult learn_ipw(const PanelDataset& data, const LearnerConfig& cfg, const FoldAssignment& folds) {
  using namespace learner_detail;
  cfg.validate(data.schema());
  const std::size_t stages = data.num_stages();
  const double n = static_cast<double>(data.size());
  LearnResult out;
  out.dtr = initial_dtr(cfg, stages);
  out.objectives.assign(stages, 0.0);
  out.q_training_r2.resize(stages);
  PropensityModels props;
  if (cfg.oracle) {
    // Oracle propensities laid out as in-sample predictions.
    props.fold_signature = folds.signature();
    props.schema = data.schema();
    for (std::size_t t = 0; t < stages; ++t) {
      const Matrix h = history_features(data, t);
      Matrix e(h.rows(), data.num_actions(t));
      for (Eigen::Index i = 0; i < h.rows(); ++i)
        for (int a = 0; a < e.cols(); ++a) e(i, a) = cfg.oracle->propensity(t, row_span(h, i), a);
      props.in_sample.push_back(std::move(e));
    }
  } else {
    props = learner_propensities(data, folds, cfg);
    out.warnings = props.warnings;
  }
  for (std::size_t t = stages; t-- > 0;) {
    const ScoreMatrix scores = ipw_scores(data, folds, props, out.dtr, t);
    const auto found = search_stage(data, cfg, out.dtr, scores.values, t);
    out.dtr.policies[t] = found.tree;
    out.objectives[t] = found.objective / n;
  }
  return out;
}

inline LearnResult learn_ipw(const PanelDataset& data, const LearnerConfig& cfg) {
  return learn_ipw(data, cfg, learner_folds(data, cfg));
}

/// Per-unit terms of the simultaneous AIPW welfare estimate
///   sum_t [psi_t Y_t - (psi_t - psi_{t-1}) Q_t(H_t, pi_t(H_t))],
/// psi_t = prod_{s<=t} 1{A_s = pi_s(H_s)} / prod_{s<=t} e_s(H_s, A_s), psi_0 = 1.
/// q_policy[t](i) is Q_t^{pi_{(t+1):T}}(H_{i,t}, pi_t(H_{i,t})) and
/// e_observed[t](i) the propensity of the observed action.
inline std::vector<double> aipw_welfare_terms(const PanelDataset& data, const Dtr& dtr,
                                              const std::vector<std::vector<double>>& q_policy,
                                              const std::vector<std::vector<double>>& e_observed,
                                              const std::vector<std::vector<int>>& policy_actions_by_stage) {
  const std::size_t stages = data.num_stages();
  if (dtr.num_stages() != stages) throw Error("aipw welfare: DTR stage count differs from the data");
  std::vector<double> terms(data.size(), 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    double psi_prev = 1.0;
    double value = 0.0;
    bool follows = true;
    double weight = 1.0;
    for (std::size_t t = 0; t < stages; ++t) {
      follows = follows && data.action(t, i) == policy_actions_by_stage[t][i];
      weight *= e_observed[t][i];
      const double psi = follows ? 1.0 / weight : 0.0;
      value += psi * data.outcome(t, i) - (psi - psi_prev) * q_policy[t][i];
      psi_prev = psi;
    }
    terms[i] = value;
  }
  return terms;
}

struct WelfareEstimate {
  double value = 0.0;
  double standard_error = 0.0;
};

inline WelfareEstimate summarize_terms(const std::vector<double>& terms) {
  return {order_free_sum(terms) / static_cast<double>(terms.size()),
          sample_sd(terms) / std::sqrt(static_cast<double>(terms.size()))};
}

namespace learner_detail {

/// Inputs of the simultaneous AIPW estimate for one DTR, from fitted or oracle nuisances.
class WelfareEvaluator {
 public:
  WelfareEvaluator(const PanelDataset& data, const LearnerConfig& cfg, const FoldAssignment& folds)
      : data_(data), cfg_(cfg), folds_(folds), q_spec_(seeded(cfg.q, cfg.seed, "q")) {
    const std::size_t stages = data.num_stages();
    for (std::size_t t = 0; t < stages; ++t) histories_.push_back(history_features(data, t));
    e_obs_.assign(stages, std::vector<double>(data.size()));
    if (!cfg.oracle) {
      props_ = learner_propensities(data, folds, cfg);
      for (std::size_t t = 0; t < stages; ++t)
        for (std::size_t i = 0; i < data.size(); ++i) e_obs_[t][i] = props_->at(t, i, data.action(t, i));
    } else {
      for (std::size_t t = 0; t < stages; ++t)
        for (std::size_t i = 0; i < data.size(); ++i)
          e_obs_[t][i] = cfg.oracle->propensity(t, row_span(histories_[t], static_cast<Eigen::Index>(i)),
                                                data.action(t, i));
    }
  }

  const std::vector<std::string>& warnings() const {
    static const std::vector<std::string> none;
    return props_ ? props_->warnings : none;
  }

  /// `suffix_key[t]` identifies pi_{t:T}; Q_t models are cached per key of
  /// the stage-(t+1) suffix, since Q_t^{pi} depends only on the future policies.
  std::vector<double> terms(const Dtr& dtr, const std::vector<std::vector<std::size_t>>& suffix_key = {}) {
    const std::size_t stages = data_.num_stages();
    std::vector<std::vector<int>> acts(stages);
    for (std::size_t t = 0; t < stages; ++t) acts[t] = policy_actions(dtr, t, histories_[t]);
    std::vector<std::vector<double>> q_pol(stages, std::vector<double>(data_.size()));
    std::shared_ptr<const QModels> q_next;
    for (std::size_t t = stages; t-- > 0;) {
      if (cfg_.oracle) {
        for (std::size_t i = 0; i < data_.size(); ++i)
          q_pol[t][i] = cfg_.oracle->q(t, row_span(histories_[t], static_cast<Eigen::Index>(i)), acts[t][i], dtr);
        continue;
      }
      std::shared_ptr<const QModels> q;
      std::vector<std::size_t> key;
      if (!suffix_key.empty() && t + 1 < stages) key = suffix_key[t + 1];
      const bool cacheable = !suffix_key.empty() || t + 1 == stages;
      if (cacheable) {
        auto& slot = cache_[{t, key}];
        if (!slot)
          slot = std::make_shared<const QModels>(
              fitted_q_evaluation(data_, folds_, dtr, t, q_spec_, q_next.get(), cfg_.jobs));
        q = slot;
      } else {
        q = std::make_shared<const QModels>(
            fitted_q_evaluation(data_, folds_, dtr, t, q_spec_, q_next.get(), cfg_.jobs));
      }
      for (std::size_t i = 0; i < data_.size(); ++i)
        q_pol[t][i] = q->predict(folds_.fold(i), row_span(histories_[t], static_cast<Eigen::Index>(i)), acts[t][i]);
      q_next = q;
    }
    return aipw_welfare_terms(data_, dtr, q_pol, e_obs_, acts);
  }

 private:
  const PanelDataset& data_;
  const LearnerConfig& cfg_;
  const FoldAssignment& folds_;
  RegressorSpec q_spec_;
  std::vector<Matrix> histories_;
  std::optional<PropensityModels> props_;
  std::vector<std::vector<double>> e_obs_;
  std::map<std::pair<std::size_t, std::vector<std::size_t>>, std::shared_ptr<const QModels>> cache_;
};

}  // namespace learner_detail

/// Cross-fitted (or oracle) AIPW estimate of W(dtr) from observational data.
inline WelfareEstimate aipw_welfare_estimate(const PanelDataset& data, const Dtr& dtr, const LearnerConfig& cfg,
                                             const FoldAssignment& folds) {
  if (cfg.folds < 2) throw Error("aipw welfare: K must be at least 2");
  if (!(cfg.eta > 0.0 && cfg.eta < 0.5)) throw Error("aipw welfare: eta must lie in (0, 0.5)");
  learner_detail::WelfareEvaluator eval(data, cfg, folds);
  return summarize_terms(eval.terms(dtr));
}

inline WelfareEstimate aipw_welfare_estimate(const PanelDataset& data, const Dtr& dtr, const LearnerConfig& cfg) {
  return aipw_welfare_estimate(data, dtr, cfg, learner_folds(data, cfg));
}

struct WelfareContrast {
  std::string label;
  WelfareEstimate comparator;
  WelfareEstimate difference;  // W(dtr) - W(comparator), paired per unit
};

struct WelfareReport {
  WelfareEstimate estimate;
  std::vector<WelfareContrast> contrasts;
  std::vector<std::string> warnings;
};

/// AIPW welfare of `dtr` and its contrasts against each comparator, all
/// evaluated with one set of cross-fitted propensities.
inline WelfareReport aipw_welfare_report(const PanelDataset& data, const Dtr& dtr, const LearnerConfig& cfg,
                                         const FoldAssignment& folds,
                                         const std::vector<std::pair<std::string, Dtr>>& comparators) {
  if (cfg.folds < 2) throw Error("aipw welfare: K must be at least 2");
  if (!(cfg.eta > 0.0 && cfg.eta < 0.5)) throw Error("aipw welfare: eta must lie in (0, 0.5)");
  learner_detail::WelfareEvaluator eval(data, cfg, folds);
  const auto base = eval.terms(dtr);
  WelfareReport report{summarize_terms(base), {}, eval.warnings()};
  for (const auto& [label, other] : comparators) {
    auto terms = eval.terms(other);
    WelfareContrast c{label, summarize_terms(terms), {}};
    for (std::size_t i = 0; i < terms.size(); ++i) terms[i] = base[i] - terms[i];
    c.difference = summarize_terms(terms);
    report.contrasts.push_back(std::move(c));
  }
  return report;
}

/// Constant DTRs assigning arm a at every stage, for each arm all stages share.
inline std::vector<std::pair<std::string, Dtr>> uniform_comparators(const StageSchema& schema) {
  int common = schema.actions_per_stage.empty() ? 0 : schema.actions_per_stage[0];
  for (int d : schema.actions_per_stage) common = std::min(common, d);
  std::vector<std::pair<std::string, Dtr>> out;
  for (int a = 0; a < common; ++a) {
    const std::vector<int> acts(schema.num_stages(), a);
    std::string label = "(";
    for (std::size_t t = 0; t < acts.size(); ++t) label += (t ? "," : "") + std::to_string(a);
    out.emplace_back(label + ")", constant_dtr(acts));
  }
  return out;
}

namespace learner_detail {

/// Odometer over per-stage candidate indices, last stage fastest.
inline bool next_combination(std::vector<int>& idx, const std::vector<std::vector<PolicyTree>>& per_stage) {
  for (std::size_t k = idx.size(); k > 0; --k) {
    if (++idx[k - 1] < static_cast<int>(per_stage[k - 1].size())) return true;
    idx[k - 1] = 0;
  }
  return false;
}

}  // namespace learner_detail

/// Maximizes the simultaneous AIPW welfare estimate over the product of the
/// enumerated stage classes; the first candidate in enumeration order wins ties.
inline LearnResult learn_aipw_simultaneous(const PanelDataset& data, const LearnerConfig& cfg,
                                           const FoldAssignment& folds) {
  cfg.validate(data.schema());
  const std::size_t stages = data.num_stages();
  std::vector<std::vector<PolicyTree>> per_stage;
  long double total = 1.0L;
  for (std::size_t t = 0; t < stages; ++t) {
    auto e = enumerate_policies(cfg.classes[t], t, history_features(data, t), data.num_actions(t));
    total *= static_cast<long double>(e.policies.size());
    per_stage.push_back(std::move(e.policies));
  }
  if (total > static_cast<long double>(kMaxSimultaneousDtrs))
    throw Error("aipw_simultaneous: the product policy class has " + std::to_string(static_cast<double>(total)) +
                " DTRs, above the limit of " + std::to_string(kMaxSimultaneousDtrs));

  learner_detail::WelfareEvaluator eval(data, cfg, folds);
  const auto constraints = learner_detail::constraints_of(cfg, stages);
  std::vector<int> idx(stages, 0);
  std::optional<LearnResult> best;
  double best_value = 0.0;
  do {
    std::vector<StagePolicy> p;
    for (std::size_t t = 0; t < stages; ++t) p.emplace_back(per_stage[t][static_cast<std::size_t>(idx[t])]);
    Dtr dtr(std::move(p), constraints);
    std::vector<std::vector<std::size_t>> suffix(stages);
    for (std::size_t t = 0; t < stages; ++t)
      for (std::size_t s = t; s < stages; ++s) suffix[t].push_back(static_cast<std::size_t>(idx[s]));
    const double value = summarize_terms(eval.terms(dtr, suffix)).value;
    if (!best || value > best_value) {
      best_value = value;
      best = LearnResult{dtr, std::vector<double>(stages, value), eval.warnings(), {}};
    }
  } while (learner_detail::next_combination(idx, per_stage));
  return *best;
}

inline LearnResult learn_aipw_simultaneous(const PanelDataset& data, const LearnerConfig& cfg) {
  return learn_aipw_simultaneous(data, cfg, learner_folds(data, cfg));
}

/// Runs the configured method.
inline LearnResult learn(const PanelDataset& data, const LearnerConfig& cfg, const FoldAssignment& folds) {
  switch (cfg.method) {
    case Method::dr: return learn_dr(data, cfg, folds);
    case Method::q_learn: return learn_q(data, cfg, folds, false);
    case Method::q_search: return learn_q(data, cfg, folds, true);
    case Method::ipw: return learn_ipw(data, cfg, folds);
    default: return learn_aipw_simultaneous(data, cfg, folds);
  }
}

inline LearnResult learn(const PanelDataset& data, const LearnerConfig& cfg) {
  return learn(data, cfg, learner_folds(data, cfg));
}

}  // namespace drdtr

#endif  // DRDTR_LEARNERS_HPP_
