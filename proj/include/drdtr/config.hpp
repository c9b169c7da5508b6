#ifndef DRDTR_CONFIG_HPP_
#define DRDTR_CONFIG_HPP_

// Run configuration in INI form. Stage sections are named [stage1], [stage2],
// ... and must be contiguous from 1:
//
//   [stage1]
//   actions = 2          ; arms at this stage
//   states = 20          ; state columns observed before the action
//   outcome = false      ; whether the stage records an outcome column
//   depth = 1            ; policy tree depth
//   features = 0,3       ; optional: history columns the tree may split on
//   constraint = unconstrained | absorbing_start | absorbing_stop
//
// Optional [learner] keys: method, folds, eta, propensity, q (random_forest or
// linear), first_stage_only. Optional [forest] keys: trees, max_depth,
// min_leaf, mtry.

#include "drdtr/learners.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace drdtr {

namespace config_detail {

/// Value at `path` converted to T, or nullopt when the key is absent. A
/// present value that does not convert is an error.
template <typename T>
std::optional<T> read(const boost::property_tree::ptree& tree, const std::string& path) {
  const auto node = tree.get_child_optional(path);
  if (!node) return std::nullopt;
  if (auto v = node->get_value_optional<T>()) return *v;
  throw Error("config: '" + path + "' has invalid value '" + node->data() + "'");
}

inline std::vector<std::size_t> parse_index_list(const std::string& text, const std::string& where) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    try {
      const long v = std::stol(item.substr(first));
      if (v < 0) throw Error("");
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw Error("config: " + where + ": '" + item + "' is not a column index");
    }
  }
  return out;
}

}  // namespace config_detail

struct StageSettings {
  int actions = 2;
  int states = 0;
  bool outcome = false;
  PolicyClass policy_class;
  StageConstraint::Kind constraint = StageConstraint::Kind::unconstrained;
};

struct RunConfig {
  std::vector<StageSettings> stages;
  boost::property_tree::ptree tree;

  bool has_stages() const { return !stages.empty(); }

  StageSchema schema() const {
    if (stages.empty()) throw Error("config: no [stage1] section");
    StageSchema s;
    for (const auto& st : stages) {
      s.actions_per_stage.push_back(st.actions);
      s.state_dims.push_back(st.states);
      s.outcome_present.push_back(st.outcome);
    }
    s.validate();
    return s;
  }

  std::vector<PolicyClass> classes() const {
    std::vector<PolicyClass> out;
    for (const auto& st : stages) out.push_back(st.policy_class);
    return out;
  }

  std::vector<StageConstraint> constraints() const {
    std::vector<StageConstraint> out;
    for (const auto& st : stages) out.push_back(make_constraint(st.constraint, st.actions));
    return out;
  }

  /// Copies [learner] and [forest] values into `cfg`; absent keys keep the
  /// existing values.
  void apply(LearnerConfig& cfg) const {
    if (auto v = config_detail::read<std::string>(tree, "learner.method")) cfg.method = parse_method(*v);
    if (auto v = config_detail::read<int>(tree, "learner.folds")) cfg.folds = *v;
    if (auto v = config_detail::read<double>(tree, "learner.eta")) cfg.eta = *v;
    if (auto v = config_detail::read<std::string>(tree, "learner.propensity"))
      cfg.propensity.kind = parse_regressor_kind(*v);
    if (auto v = config_detail::read<std::string>(tree, "learner.q")) cfg.q.kind = parse_regressor_kind(*v);
    if (auto v = config_detail::read<bool>(tree, "learner.first_stage_only")) cfg.propensity.first_stage_features_only = *v;
    for (ForestParams* f : {&cfg.propensity.forest, &cfg.q.forest}) {
      if (auto v = config_detail::read<int>(tree, "forest.trees")) f->num_trees = *v;
      if (auto v = config_detail::read<int>(tree, "forest.max_depth")) f->max_depth = *v;
      if (auto v = config_detail::read<int>(tree, "forest.min_leaf")) f->min_leaf = *v;
      if (auto v = config_detail::read<double>(tree, "forest.mtry")) f->mtry_fraction = *v;
    }
    if (has_stages()) {
      cfg.classes = classes();
      cfg.constraints = constraints();
    }
  }
};


inline RunConfig parse_run_config(std::istream& in, const std::string& origin = "config") {
  RunConfig cfg;
  try {
    boost::property_tree::ini_parser::read_ini(in, cfg.tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  std::size_t seen = 0;
  for (const auto& [name, section] : cfg.tree)
    if (name.rfind("stage", 0) == 0) ++seen;
  try {
    for (std::size_t t = 1; t <= seen; ++t) {
      const std::string name = "stage" + std::to_string(t);
      const auto section = cfg.tree.get_child_optional(name);
      if (!section) throw Error(origin + ": stage sections must run [stage1]..[stage" + std::to_string(seen) + "]");
      StageSettings st;
      st.actions = config_detail::read<int>(*section, "actions").value_or(2);
      st.states = config_detail::read<int>(*section, "states").value_or(0);
      st.outcome = config_detail::read<bool>(*section, "outcome").value_or(false);
      st.policy_class.depth = config_detail::read<int>(*section, "depth").value_or(1);
      if (auto f = config_detail::read<std::string>(*section, "features"))
        st.policy_class.features = config_detail::parse_index_list(*f, name + ".features");
      st.constraint = parse_constraint_kind(config_detail::read<std::string>(*section, "constraint").value_or("unconstrained"));
      cfg.stages.push_back(std::move(st));
    }
  } catch (const boost::property_tree::ptree_error& e) {
    throw Error(origin + ": " + e.what());
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path + "'");
  return parse_run_config(in, path);
}

/// Config text describing a schema and policy classes, one section per stage.
inline std::string schema_config_text(const StageSchema& schema, const std::vector<PolicyClass>& classes = {}) {
  std::ostringstream out;
  for (std::size_t t = 0; t < schema.num_stages(); ++t) {
    if (t) out << '\n';
    out << "[stage" << t + 1 << "]\n"
        << "actions = " << schema.actions_per_stage[t] << '\n'
        << "states = " << schema.state_dims[t] << '\n'
        << "outcome = " << (schema.outcome_present[t] ? "true" : "false") << '\n'
        << "depth = " << (t < classes.size() ? classes[t].depth : 1) << '\n';
  }
  return out.str();
}

}  // namespace drdtr

#endif  // DRDTR_CONFIG_HPP_
