#ifndef DRDTR_POLICY_JSON_HPP_
#define DRDTR_POLICY_JSON_HPP_

// Tree text form: {"stage": 1-based, "depth": d, "nodes": [{"feature", "threshold"}],
// "leaves": [action]} with nodes and leaves in breadth-first order. Infinite
// thresholds are written as the strings "inf" and "-inf".

#include "drdtr/policy.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <string>

namespace drdtr {

namespace json_detail {

inline nlohmann::json number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double number(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw Error("policy json: bad threshold '" + s + "'");
  }
  return j.get<double>();
}

}  // namespace json_detail

inline nlohmann::json to_json(const PolicyTree& tree) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& r : tree.nodes())
    nodes.push_back({{"feature", r.feature}, {"threshold", json_detail::number(r.threshold)}});
  return {{"stage", tree.stage() + 1}, {"depth", tree.depth()}, {"nodes", nodes}, {"leaves", tree.leaves()}};
}

inline PolicyTree tree_from_json(const nlohmann::json& j) {
  try {
    const auto stage = j.at("stage").get<std::size_t>();
    if (stage < 1) throw Error("policy json: stage numbers start at 1");
    std::vector<SplitRule> nodes;
    for (const auto& n : j.at("nodes"))
      nodes.push_back({n.at("feature").get<std::size_t>(), json_detail::number(n.at("threshold"))});
    return PolicyTree(stage - 1, j.at("depth").get<int>(), std::move(nodes), j.at("leaves").get<std::vector<int>>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("policy json: ") + e.what());
  }
}

inline nlohmann::json to_json(const StageConstraint& c) {
  return {{"kind", to_string(c.kind)}, {"absorbing", c.absorbing}};
}

inline StageConstraint constraint_from_json(const nlohmann::json& j) {
  StageConstraint c;
  c.kind = parse_constraint_kind(j.value("kind", std::string("unconstrained")));
  if (j.contains("absorbing")) c.absorbing = j.at("absorbing").get<std::vector<int>>();
  return c;
}

/// Serializes a DTR whose stage policies are all trees.
inline nlohmann::json to_json(const Dtr& dtr) {
  nlohmann::json stages = nlohmann::json::array();
  nlohmann::json constraints = nlohmann::json::array();
  for (std::size_t t = 0; t < dtr.num_stages(); ++t) {
    const PolicyTree* tree = dtr.tree(t);
    if (tree == nullptr)
      throw Error("stage " + std::to_string(t + 1) + " policy is pointwise and has no serialized form");
    stages.push_back(to_json(*tree));
    constraints.push_back(to_json(dtr.constraints[t]));
  }
  return {{"stages", stages}, {"constraints", constraints}};
}

inline Dtr dtr_from_json(const nlohmann::json& j) {
  std::vector<StagePolicy> policies;
  std::vector<StageConstraint> constraints;
  try {
    const auto& stages = j.at("stages");
    for (std::size_t t = 0; t < stages.size(); ++t) {
      PolicyTree tree = tree_from_json(stages[t]);
      if (tree.stage() != t) throw Error("policy json: stages must be listed in ascending order from 1");
      policies.emplace_back(std::move(tree));
    }
    if (j.contains("constraints"))
      for (const auto& c : j.at("constraints")) constraints.push_back(constraint_from_json(c));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("policy json: ") + e.what());
  }
  return Dtr(std::move(policies), std::move(constraints));
}

/// Reads a DTR from a file holding either a bare DTR object or a learner
/// output with a "dtr" member.
inline Dtr load_dtr(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open policy file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": " + e.what());
  }
  return dtr_from_json(j.contains("dtr") ? j.at("dtr") : j);
}

}  // namespace drdtr

#endif  // DRDTR_POLICY_JSON_HPP_
