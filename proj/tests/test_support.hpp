#ifndef DRDTR_TEST_SUPPORT_HPP_
#define DRDTR_TEST_SUPPORT_HPP_

#include "drdtr/dataset.hpp"

#include <string>
#include <vector>

namespace drdtr::testing {

/// Panel with unit ids "1".."n".
inline PanelDataset make_panel(StageSchema schema, std::vector<std::vector<int>> actions, std::vector<Matrix> states,
                               std::vector<Vector> outcomes) {
  std::vector<std::string> ids(actions.at(0).size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = std::to_string(i + 1);
  return PanelDataset(std::move(schema), std::move(ids), std::move(actions), std::move(states), std::move(outcomes));
}

/// Single-stage panel with binary (or d-ary) action and states x.
inline PanelDataset single_stage(const Matrix& x, std::vector<int> actions, const Vector& y, int arms = 2) {
  return make_panel(StageSchema::uniform(1, arms, {static_cast<int>(x.cols())}, {true}), {std::move(actions)}, {x},
                    {y});
}

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace drdtr::testing

#endif  // DRDTR_TEST_SUPPORT_HPP_
