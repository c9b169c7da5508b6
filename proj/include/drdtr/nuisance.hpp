#ifndef DRDTR_NUISANCE_HPP_
#define DRDTR_NUISANCE_HPP_

#include "drdtr/dataset.hpp"
#include "drdtr/forest.hpp"
#include "drdtr/linear.hpp"
#include "drdtr/policy.hpp"

#include "json.hpp"

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace drdtr {

struct RegressorSpec {
  enum class Kind { random_forest, linear };
  Kind kind = Kind::random_forest;
  ForestParams forest;
  /// Restrict predictors to the first-stage state block, whatever the stage.
  bool first_stage_features_only = false;

  void validate() const {
    if (kind == Kind::random_forest) forest.validate();
  }
};

inline const char* to_string(RegressorSpec::Kind k) {
  return k == RegressorSpec::Kind::linear ? "linear" : "random_forest";
}

inline RegressorSpec::Kind parse_regressor_kind(const std::string& s) {
  if (s == "random_forest" || s == "forest") return RegressorSpec::Kind::random_forest;
  if (s == "linear") return RegressorSpec::Kind::linear;
  throw Error("unknown regressor kind '" + s + "'");
}

/// A fitted regression or classification model. Immutable after fitting.
class FittedModel {
 public:
  FittedModel() = default;
  explicit FittedModel(Forest f, bool classifier) : model_(std::move(f)), classifier_(classifier) {}
  explicit FittedModel(LinearModel m) : model_(std::move(m)) {}
  explicit FittedModel(LogisticModel m) : model_(std::move(m)), classifier_(true) {}

  bool is_classifier() const { return classifier_; }

  double predict(std::span<const double> x) const {
    if (const auto* f = std::get_if<Forest>(&model_)) return f->predict(x);
    if (const auto* l = std::get_if<LinearModel>(&model_)) return l->predict(x);
    throw Error("predict called on a classifier");
  }

  /// Unclipped class probabilities; writes one value per class.
  void predict_proba(std::span<const double> x, std::span<double> out) const {
    if (const auto* f = std::get_if<Forest>(&model_)) return f->predict(x, out);
    if (const auto* l = std::get_if<LogisticModel>(&model_)) return l->predict_proba(x, out);
    throw Error("predict_proba called on a regressor");
  }

 private:
  std::variant<std::monostate, Forest, LinearModel, LogisticModel> model_;
  bool classifier_ = false;
};

inline FittedModel fit_regressor(const RegressorSpec& spec, const Matrix& x, std::span<const double> y,
                                 int jobs = 1) {
  spec.validate();
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw Error("fit_regressor: row count mismatch");
  if (x.rows() < 2) throw Error("fit_regressor: at least 2 training rows are required");
  if (spec.kind == RegressorSpec::Kind::linear) return FittedModel(LinearModel::fit(x, y));
  Matrix target = Eigen::Map<const Matrix>(y.data(), x.rows(), 1);
  return FittedModel(Forest::fit(x, target, spec.forest, jobs), false);
}

inline FittedModel fit_classifier(const RegressorSpec& spec, const Matrix& x, std::span<const int> labels,
                                  int num_classes, int jobs = 1) {
  spec.validate();
  if (static_cast<std::size_t>(x.rows()) != labels.size()) throw Error("fit_classifier: row count mismatch");
  if (x.rows() < 2) throw Error("fit_classifier: at least 2 training rows are required");
  if (spec.kind == RegressorSpec::Kind::linear) return FittedModel(LogisticModel::fit(x, labels, num_classes));
  Matrix onehot = Matrix::Zero(x.rows(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) onehot(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return FittedModel(Forest::fit(x, onehot, spec.forest, jobs), true);
}

/// Floors every class probability at eta and rescales the others so the
/// vector still sums to one. Classes pushed below eta by the rescaling are
/// floored too, so the result always has min >= eta. Requires eta * d <= 1.
inline void clip_probabilities(std::span<double> p, double eta) {
  const std::size_t d = p.size();
  if (eta * static_cast<double>(d) > 1.0 + 1e-12) throw Error("clip_probabilities: eta * classes exceeds 1");
  std::vector<char> floored(d, 0);
  for (;;) {
    std::size_t nf = 0;
    double free_mass = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      if (floored[c]) ++nf;
      else free_mass += std::max(p[c], 0.0);
    }
    const double budget = 1.0 - eta * static_cast<double>(nf);
    const std::size_t nfree = d - nf;
    bool changed = false;
    for (std::size_t c = 0; c < d; ++c) {
      if (floored[c]) continue;
      const double v = free_mass > 0.0 ? std::max(p[c], 0.0) * budget / free_mass
                                       : budget / static_cast<double>(nfree);
      if (v < eta) {
        floored[c] = 1;
        changed = true;
      }
    }
    if (!changed) {
      for (std::size_t c = 0; c < d; ++c)
        p[c] = floored[c] ? eta
                          : (free_mass > 0.0 ? std::max(p[c], 0.0) * budget / free_mass
                                             : budget / static_cast<double>(nfree));
      return;
    }
  }
}

namespace nuisance_detail {

/// Predictor columns of the stage history; the first-stage block only when
/// the spec asks for it.
inline Matrix predictors(const Matrix& history, const StageSchema& schema, std::size_t stage,
                         const RegressorSpec& spec) {
  if (!spec.first_stage_features_only) return history;
  return history.middleCols(static_cast<Eigen::Index>(stage), schema.state_dims[0]);
}

inline std::vector<double> predictor_row(std::span<const double> h, const StageSchema& schema,
                                         std::size_t stage, const RegressorSpec& spec) {
  if (!spec.first_stage_features_only) return {h.begin(), h.end()};
  const auto first = h.begin() + static_cast<std::ptrdiff_t>(stage);
  return {first, first + schema.state_dims[0]};
}

inline Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

}  // namespace nuisance_detail

/// Cross-fitted propensity models e_t^{-k} for every stage, with their
/// clipped in-sample predictions (each unit scored by its own fold's model).
struct PropensityModels {
  RegressorSpec spec;
  double eta = 0.01;
  StageSchema schema;
  std::vector<std::vector<FittedModel>> models;  // [fold][stage]
  std::vector<Matrix> in_sample;                 // [stage] n x d_t, clipped
  std::vector<std::vector<std::size_t>> training_units;  // [fold]
  std::uint64_t fold_signature = 0;
  std::vector<std::string> warnings;

  std::size_t num_stages() const { return in_sample.size(); }

  /// Clipped probabilities of every action for history h, using fold k's model.
  std::vector<double> predict(int fold, std::size_t stage, std::span<const double> h) const {
    const auto x = nuisance_detail::predictor_row(h, schema, stage, spec);
    std::vector<double> p(static_cast<std::size_t>(schema.actions_per_stage[stage]));
    models[static_cast<std::size_t>(fold)][stage].predict_proba(x, p);
    clip_probabilities(p, eta);
    return p;
  }

  /// e_t^{-k(i)}(H_{i,t}, a).
  double at(std::size_t stage, std::size_t unit, int action) const {
    return in_sample[stage](static_cast<Eigen::Index>(unit), action);
  }
};

inline PropensityModels fit_propensities(const PanelDataset& data, const FoldAssignment& folds,
                                         const RegressorSpec& spec, double eta, int jobs = 1) {
  const auto& schema = data.schema();
  if (!(eta > 0.0 && eta * schema.max_actions() < 1.0))
    throw Error("fit_propensities: eta must lie in (0, 1/max_t d_t), got " + std::to_string(eta));
  if (folds.size() != data.size()) throw Error("fit_propensities: fold assignment size differs from dataset");
  PropensityModels out;
  out.spec = spec;
  out.eta = eta;
  out.schema = schema;
  out.fold_signature = folds.signature();
  const std::size_t stages = data.num_stages();
  const auto k_count = static_cast<std::size_t>(folds.num_folds);
  out.models.assign(k_count, std::vector<FittedModel>(stages));
  out.in_sample.resize(stages);
  for (std::size_t k = 0; k < k_count; ++k) out.training_units.push_back(folds.complement(static_cast<int>(k)));

  for (std::size_t t = 0; t < stages; ++t) {
    const int d = schema.actions_per_stage[t];
    const Matrix x = nuisance_detail::predictors(history_features(data, t), schema, t, spec);
    out.in_sample[t].resize(static_cast<Eigen::Index>(data.size()), d);
    for (std::size_t k = 0; k < k_count; ++k) {
      const auto& train = out.training_units[k];
      std::vector<int> labels;
      labels.reserve(train.size());
      std::vector<char> seen(static_cast<std::size_t>(d), 0);
      for (auto i : train) {
        labels.push_back(data.action(t, i));
        seen[static_cast<std::size_t>(data.action(t, i))] = 1;
      }
      for (int a = 0; a < d; ++a)
        if (!seen[static_cast<std::size_t>(a)])
          out.warnings.push_back("stage " + std::to_string(t + 1) + ", fold " + std::to_string(k) +
                                 ": action " + std::to_string(a) +
                                 " never occurs in the training data; its propensity falls back to the floor");
      RegressorSpec fold_spec = spec;
      fold_spec.forest.seed = derive_seed(spec.forest.seed, {0x70, t, k});
      out.models[k][t] = fit_classifier(fold_spec, nuisance_detail::select_rows(x, train), labels, d, jobs);
    }
    std::vector<double> p(static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto k = static_cast<std::size_t>(folds.fold(i));
      out.models[k][t].predict_proba(row_span(x, static_cast<Eigen::Index>(i)), p);
      clip_probabilities(p, eta);
      for (int a = 0; a < d; ++a) out.in_sample[t](static_cast<Eigen::Index>(i), a) = p[static_cast<std::size_t>(a)];
    }
  }
  return out;
}

/// Regression design for Q_t(h, a). Forest: [h, a]. Linear: [h, D, D*h]
/// where D is the one-hot indicator of the arms a >= 1.
inline std::vector<double> q_design_row(RegressorSpec::Kind kind, std::span<const double> h, int action,
                                        int num_actions) {
  std::vector<double> row(h.begin(), h.end());
  if (kind == RegressorSpec::Kind::random_forest) {
    row.push_back(static_cast<double>(action));
    return row;
  }
  for (int a = 1; a < num_actions; ++a) row.push_back(a == action ? 1.0 : 0.0);
  for (int a = 1; a < num_actions; ++a)
    for (double v : h) row.push_back(a == action ? v : 0.0);
  return row;
}

/// Cross-fitted Q-function models at one stage, one per fold.
struct QModels {
  std::size_t stage = 0;
  int num_actions = 2;
  RegressorSpec::Kind design = RegressorSpec::Kind::random_forest;
  std::vector<FittedModel> per_fold;
  std::vector<std::vector<std::size_t>> training_units;  // [fold]
  std::vector<double> training_r2;                       // diagnostic only
  std::uint64_t fold_signature = 0;

  /// Q_t^{-k}(h, a).
  double predict(int fold, std::span<const double> h, int action) const {
    return per_fold[static_cast<std::size_t>(fold)].predict(q_design_row(design, h, action, num_actions));
  }

  /// n x d matrix of Q_t^{-k(i)}(H_{i,t}, a).
  Matrix in_sample(const Matrix& history, const FoldAssignment& folds) const {
    if (folds.signature() != fold_signature) throw Error("Q models were fitted on a different fold assignment");
    Matrix out(history.rows(), num_actions);
    for (Eigen::Index i = 0; i < history.rows(); ++i)
      for (int a = 0; a < num_actions; ++a)
        out(i, a) = predict(folds.fold(static_cast<std::size_t>(i)), row_span(history, i), a);
    return out;
  }
};

/// Fits Q_t^{-k} for every fold k by regressing `targets` on (H_t, A_t)
/// over the units outside fold k.
inline QModels fit_q_models(const PanelDataset& data, const FoldAssignment& folds, std::size_t stage,
                            std::span<const double> targets, const RegressorSpec& spec, int jobs = 1) {
  if (stage >= data.num_stages()) throw Error("fitted Q-evaluation: stage " + std::to_string(stage + 1) + " out of range");
  if (targets.size() != data.size()) throw Error("fitted Q-evaluation: target length differs from dataset");
  QModels q;
  q.stage = stage;
  q.num_actions = data.num_actions(stage);
  q.design = spec.kind;
  q.fold_signature = folds.signature();
  const Matrix h = history_features(data, stage);
  const auto n = static_cast<Eigen::Index>(data.size());
  const std::size_t width = q_design_row(spec.kind, row_span(h, 0), 0, q.num_actions).size();
  Matrix design(n, static_cast<Eigen::Index>(width));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = q_design_row(spec.kind, row_span(h, i), data.action(stage, static_cast<std::size_t>(i)), q.num_actions);
    design.row(i) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), static_cast<Eigen::Index>(width));
  }
  for (int k = 0; k < folds.num_folds; ++k) {
    auto train = folds.complement(k);
    const Matrix x = nuisance_detail::select_rows(design, train);
    std::vector<double> y;
    y.reserve(train.size());
    for (auto i : train) y.push_back(targets[i]);
    RegressorSpec fold_spec = spec;
    fold_spec.forest.seed = derive_seed(spec.forest.seed, {0x51, stage, static_cast<std::uint64_t>(k)});
    FittedModel m = fit_regressor(fold_spec, x, y, jobs);

    const double ybar = mean(y);
    double ss_res = 0.0, ss_tot = 0.0;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double e = y[static_cast<std::size_t>(r)] - m.predict(row_span(x, r));
      ss_res += e * e;
      ss_tot += (y[static_cast<std::size_t>(r)] - ybar) * (y[static_cast<std::size_t>(r)] - ybar);
    }
    q.training_r2.push_back(ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0);
    q.per_fold.push_back(std::move(m));
    q.training_units.push_back(std::move(train));
  }
  return q;
}

/// Fitted Q-evaluation target Y_{i,t} + Q_{t+1}^{-k(i)}(H_{i,t+1}, pi_{t+1}(H_{i,t+1})),
/// or Y_{i,T} at the last stage.
inline std::vector<double> fqe_targets(const PanelDataset& data, const FoldAssignment& folds,
                                       const Dtr& policy, std::size_t stage, const QModels* q_next) {
  const std::size_t last = data.num_stages() - 1;
  if (stage > last) throw Error("fitted Q-evaluation: stage " + std::to_string(stage + 1) + " out of range");
  std::vector<double> y(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) y[i] = data.outcome(stage, i);
  if (stage == last) return y;
  if (q_next == nullptr) throw Error("fitted Q-evaluation: next-stage Q models are required before the last stage");
  if (q_next->stage != stage + 1) throw Error("fitted Q-evaluation: next-stage Q models belong to the wrong stage");
  if (q_next->fold_signature != folds.signature())
    throw Error("fitted Q-evaluation: next-stage Q models use a different fold assignment");
  const Matrix hn = history_features(data, stage + 1);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto h = row_span(hn, static_cast<Eigen::Index>(i));
    y[i] += q_next->predict(folds.fold(i), h, policy.action(stage + 1, h));
  }
  return y;
}

/// Q_t^{pi_{(t+1):T}} by fitted Q-evaluation. `policy` supplies the future
/// stage policies; entries at stages <= t are ignored.
inline QModels fitted_q_evaluation(const PanelDataset& data, const FoldAssignment& folds, const Dtr& policy,
                                   std::size_t stage, const RegressorSpec& spec, const QModels* q_next,
                                   int jobs = 1) {
  const auto y = fqe_targets(data, folds, policy, stage, q_next);
  return fit_q_models(data, folds, stage, y, spec, jobs);
}

/// Propensities plus final-stage Q models for one fold assignment.
struct NuisanceSet {
  PropensityModels propensity;
  QModels q_final;
};

/// True nuisance functions, for oracle evaluation in tests and simulations.
/// q(stage, h, a, policy) must return Q_t^{pi_{(t+1):T}}(h, a).
struct NuisanceOracle {
  std::function<double(std::size_t, std::span<const double>, int)> propensity;
  std::function<double(std::size_t, std::span<const double>, int, const Dtr&)> q;
};

/// Per-fold training indices, for auditing the cross-fitting exclusion.
inline nlohmann::json training_sets_json(const PropensityModels& props, std::span<const QModels> qs) {
  nlohmann::json j;
  j["propensity"] = props.training_units;
  j["q"] = nlohmann::json::array();
  for (const auto& q : qs) j["q"].push_back({{"stage", q.stage + 1}, {"training_units", q.training_units}});
  return j;
}

}  // namespace drdtr

#endif  // DRDTR_NUISANCE_HPP_
