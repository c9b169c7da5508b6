#include "drdtr/learners.hpp"
#include "drdtr/policy_json.hpp"
#include "drdtr/simulate.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

namespace {

using namespace drdtr;
using drdtr::testing::make_panel;
using drdtr::testing::single_stage;
using drdtr::testing::to_vector;

LearnerConfig base_config(Method method, std::vector<PolicyClass> classes, std::uint64_t seed = 11) {
  LearnerConfig cfg;
  cfg.method = method;
  cfg.classes = std::move(classes);
  cfg.seed = seed;
  cfg.propensity.forest.num_trees = 40;
  cfg.q.forest.num_trees = 40;
  return cfg;
}

const PolicyTree& tree_at(const Dtr& dtr, std::size_t t) { return std::get<PolicyTree>(dtr.policies[t]); }

std::vector<int> constant_actions(const Dtr& dtr) {
  return {tree_at(dtr, 0).leaves().at(0), tree_at(dtr, 1).leaves().at(0)};
}

class AppendixD : public ::testing::Test {
 protected:
  static LearnResult run(DgpKind kind, Method method) {
    const auto pop = generate({kind, 20000, 5});
    LearnerConfig cfg = base_config(method, {PolicyClass{0, {}}, PolicyClass{0, {}}});
    cfg.oracle = oracle_nuisances(kind);
    return learn(pop.data, cfg);
  }
};

TEST_F(AppendixD, BackwardInductionStopsAtLocalSolution) {
  const auto r = run(DgpKind::appendix_d, Method::dr);
  EXPECT_EQ(constant_actions(r.dtr), (std::vector<int>{0, 0}));
  EXPECT_NEAR(1.0 - exact_welfare(DgpKind::appendix_d, r.dtr), 0.4, 1e-12);
}

TEST_F(AppendixD, ModifiedMeansMakeBackwardInductionOptimal) {
  const auto r = run(DgpKind::appendix_d_modified, Method::dr);
  EXPECT_EQ(constant_actions(r.dtr), (std::vector<int>{1, 1}));
  EXPECT_NEAR(exact_welfare(DgpKind::appendix_d_modified, r.dtr), 1.0, 1e-12);
}

TEST_F(AppendixD, QSearchAgreesWithDoublyRobust) {
  EXPECT_EQ(constant_actions(run(DgpKind::appendix_d, Method::q_search).dtr), (std::vector<int>{0, 0}));
}

TEST_F(AppendixD, SimultaneousFindsGlobalOptimum) {
  const auto r = run(DgpKind::appendix_d, Method::aipw_simultaneous);
  EXPECT_EQ(constant_actions(r.dtr), (std::vector<int>{1, 1}));
  EXPECT_NEAR(r.objectives[0], 1.0, 1e-9);
  EXPECT_GE(exact_welfare(DgpKind::appendix_d, r.dtr),
            exact_welfare(DgpKind::appendix_d, run(DgpKind::appendix_d, Method::dr).dtr));
}

TEST(Learners, SingleStageDoublyRobustIsSearchOnFinalScores) {
  Rng rng(3);
  const Eigen::Index n = 400;
  Matrix x(n, 2);
  std::vector<int> a(static_cast<std::size_t>(n));
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    a[static_cast<std::size_t>(i)] = rng.bernoulli(0.5) ? 1 : 0;
    y(i) = x(i, 0) * (2 * a[static_cast<std::size_t>(i)] - 1) + 0.5 * rng.normal();
  }
  const auto data = single_stage(x, a, y);
  const LearnerConfig cfg = base_config(Method::dr, {PolicyClass{2, {}}});
  const auto result = learn(data, cfg);

  const auto folds = learner_folds(data, cfg);
  const auto props = learner_propensities(data, folds, cfg);
  const auto q = fitted_q_evaluation(data, folds, result.dtr, 0, learner_detail::seeded(cfg.q, cfg.seed, "q"), nullptr);
  const auto scores = aipw_scores_final(data, folds, props, q);
  const auto direct = exact_tree_search(scores.values, x, 2);
  EXPECT_EQ(tree_at(result.dtr, 0), direct.tree);
  EXPECT_NEAR(result.objectives[0], direct.objective / static_cast<double>(n), 1e-12);
  EXPECT_NEAR(result.objectives[0], tree_objective(direct.tree, scores.values, x, {}, {}) / static_cast<double>(n), 1e-12);
}

TEST(Learners, ActionOnlyOutcomeIsRecoveredByQLearners) {
  Rng rng(4);
  const std::size_t n = 600;
  std::vector<std::vector<int>> acts(2, std::vector<int>(n));
  Matrix s1(static_cast<Eigen::Index>(n), 2), s2(static_cast<Eigen::Index>(n), 1);
  Vector y1 = Vector::Zero(static_cast<Eigen::Index>(n)), y2(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    s1(r, 0) = rng.normal();
    s1(r, 1) = rng.normal();
    s2(r, 0) = rng.normal();
    acts[0][i] = rng.bernoulli(0.5) ? 1 : 0;
    acts[1][i] = rng.bernoulli(0.5) ? 1 : 0;
    y2(r) = acts[0][i] + 2.0 * acts[1][i];
  }
  const auto data = make_panel(StageSchema::uniform(2, 2, {2, 1}, {false, true}), acts, {s1, s2}, {y1, y2});
  for (Method m : {Method::q_search, Method::q_learn}) {
    const auto r = learn(data, base_config(m, {PolicyClass{1, {}}, PolicyClass{1, {}}}));
    const Matrix h1 = history_features(data, 0), h2 = history_features(data, 1);
    for (Eigen::Index i = 0; i < h1.rows(); ++i) {
      ASSERT_EQ(r.dtr.action(0, row_span(h1, i)), 1) << to_string(m);
      ASSERT_EQ(r.dtr.action(1, row_span(h2, i)), 1) << to_string(m);
    }
  }
}

TEST(Learners, PointwiseQLearningFollowsCovariates) {
  Rng rng(5);
  const Eigen::Index n = 800;
  Matrix x(n, 1);
  std::vector<int> a(static_cast<std::size_t>(n));
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = -1.0 + 2.0 * rng.uniform();
    a[static_cast<std::size_t>(i)] = rng.bernoulli(0.5) ? 1 : 0;
    y(i) = 2.0 * x(i, 0) * a[static_cast<std::size_t>(i)] + 0.1 * rng.normal();
  }
  const auto data = single_stage(x, a, y);
  const auto r = learn(data, base_config(Method::q_learn, {PolicyClass{1, {}}}));
  ASSERT_TRUE(std::holds_alternative<PointwisePolicy>(r.dtr.policies[0]));
  bool any0 = false, any1 = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int act = r.dtr.action(0, row_span(x, i));
    any0 |= act == 0;
    any1 |= act == 1;
  }
  EXPECT_TRUE(any0 && any1);
}

TEST(Learners, IpwWithUnitPropensityIsEmpiricalWelfareClassifier) {
  Rng rng(6);
  const Eigen::Index n = 60;
  Matrix x(n, 2);
  std::vector<int> a(static_cast<std::size_t>(n));
  Vector y(n);
  Matrix scores = Matrix::Zero(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = std::round(rng.normal() * 4.0);
    x(i, 1) = rng.normal();
    a[static_cast<std::size_t>(i)] = rng.bernoulli(0.5) ? 1 : 0;
    y(i) = rng.normal() + x(i, 0) * a[static_cast<std::size_t>(i)];
    scores(i, a[static_cast<std::size_t>(i)]) = y(i);
  }
  const auto data = single_stage(x, a, y);
  LearnerConfig cfg = base_config(Method::ipw, {PolicyClass{2, {}}});
  NuisanceOracle unit;
  unit.propensity = [](std::size_t, std::span<const double>, int) { return 1.0; };
  unit.q = [](std::size_t, std::span<const double>, int, const Dtr&) { return 0.0; };
  cfg.oracle = unit;
  const auto r = learn(data, cfg);
  const auto direct = exact_tree_search(scores, x, 2);
  EXPECT_NEAR(r.objectives[0] * static_cast<double>(n), direct.objective, 1e-9);
  EXPECT_EQ(tree_at(r.dtr, 0), direct.tree);
}

TEST(Learners, IpwFlatOutcomesGiveConstantZero) {
  // Zero outcomes make every inverse-propensity score zero.
  const auto data = single_stage((Matrix(4, 1) << 1, 2, 3, 4).finished(), {0, 1, 0, 1}, to_vector({0, 0, 0, 0}));
  LearnerConfig cfg = base_config(Method::ipw, {PolicyClass{1, {}}});
  NuisanceOracle half;
  half.propensity = [](std::size_t, std::span<const double>, int) { return 0.5; };
  half.q = [](std::size_t, std::span<const double>, int, const Dtr&) { return 0.0; };
  cfg.oracle = half;
  cfg.folds = 2;
  const auto r = learn(data, cfg);
  for (double v : {0.0, 2.5, 9.0}) EXPECT_EQ(r.dtr.action(0, std::vector<double>{v}), 0);
}

TEST(Learners, IpwSixRowHandExample) {
  // Scores 2Y on the observed arm. Splitting after the second row gives
  // arm 1 on {6, 4} and arm 0 on {2, 8, 0}: total 20, the unique maximum.
  const auto data = single_stage((Matrix(6, 1) << 1, 2, 3, 4, 5, 6).finished(), {1, 1, 0, 0, 1, 0},
                                 to_vector({3, 2, 1, 4, -1, 0}));
  LearnerConfig cfg = base_config(Method::ipw, {PolicyClass{1, {}}});
  NuisanceOracle half;
  half.propensity = [](std::size_t, std::span<const double>, int) { return 0.5; };
  half.q = [](std::size_t, std::span<const double>, int, const Dtr&) { return 0.0; };
  cfg.oracle = half;
  cfg.folds = 2;
  const auto r = learn(data, cfg);
  EXPECT_EQ(tree_at(r.dtr, 0), PolicyTree(0, 1, {{0, 2.5}}, {1, 0}));
  EXPECT_NEAR(r.objectives[0], 20.0 / 6.0, 1e-12);
}

TEST(Learners, SimultaneousMaximizesPerCandidateEstimate) {
  const auto pop = generate({DgpKind::custom_discrete, 400, 12});
  LearnerConfig cfg = base_config(Method::aipw_simultaneous, {PolicyClass{0, {}}, PolicyClass{1, {2}}});
  const auto folds = learner_folds(pop.data, cfg);
  const auto r = learn(pop.data, cfg, folds);
  double best = -1e300;
  for (int c1 = 0; c1 < 2; ++c1)
    for (const auto& t2 : enumerate_policies(cfg.classes[1], 1, history_features(pop.data, 1), 2).policies) {
      std::vector<StagePolicy> p{PolicyTree::constant(0, c1), t2};
      best = std::max(best, aipw_welfare_estimate(pop.data, Dtr(std::move(p)), cfg, folds).value);
    }
  EXPECT_NEAR(r.objectives[0], best, 1e-12);
}

TEST(Learners, SimultaneousRejectsOversizedClass) {
  const auto pop = generate({DgpKind::dgp1, 200, 13});
  LearnerConfig cfg = base_config(Method::aipw_simultaneous, {PolicyClass{1, {}}, PolicyClass{1, {}}});
  try {
    learn(pop.data, cfg);
    FAIL() << "expected the class-size guard";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("100000"), std::string::npos) << e.what();
  }
}

TEST(Learners, ConfigIsValidated) {
  const auto pop = generate({DgpKind::appendix_d, 50, 1});
  LearnerConfig cfg = base_config(Method::dr, {PolicyClass{0, {}}, PolicyClass{0, {}}});
  cfg.folds = 1;
  EXPECT_THROW(learn(pop.data, cfg), Error);
  cfg.folds = 5;
  cfg.eta = 0.5;
  EXPECT_THROW(learn(pop.data, cfg), Error);
  cfg.eta = 0.01;
  cfg.classes.pop_back();
  EXPECT_THROW(learn(pop.data, cfg), Error);
}

TEST(Learners, RunsAreReproducible) {
  const auto pop = generate({DgpKind::dgp1, 300, 14});
  for (Method m : {Method::dr, Method::ipw, Method::q_search}) {
    const LearnerConfig cfg = base_config(m, {PolicyClass{1, {}}, PolicyClass{2, {}}}, 99);
    const auto a = learn(pop.data, cfg);
    const auto b = learn(pop.data, cfg);
    EXPECT_EQ(to_json(a.dtr).dump(), to_json(b.dtr).dump()) << to_string(m);
    EXPECT_EQ(a.objectives, b.objectives);
  }
}

TEST(Learners, OracleWelfareEstimateCoversEveryRegime) {
  const auto pop = generate({DgpKind::custom_discrete, 50000, 15});
  LearnerConfig cfg = base_config(Method::aipw_simultaneous, {PolicyClass{1, {}}, PolicyClass{1, {}}});
  cfg.oracle = oracle_nuisances(DgpKind::custom_discrete);
  const auto folds = learner_folds(pop.data, cfg);
  // Enumerate on a small subsample: the discrete features give the same
  // threshold grid.
  const auto head = pop.data.subset(std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15,
                                                             16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29});
  const auto stage1 = enumerate_policies(cfg.classes[0], 0, history_features(head, 0), 2).policies;
  const auto stage2 = enumerate_policies(cfg.classes[1], 1, history_features(head, 1), 2).policies;
  int checked = 0;
  for (const auto& t1 : stage1)
    for (const auto& t2 : stage2) {
      const Dtr dtr(std::vector<StagePolicy>{t1, t2});
      const auto est = aipw_welfare_estimate(pop.data, dtr, cfg, folds);
      const double truth = exact_welfare(DgpKind::custom_discrete, dtr);
      EXPECT_LT(std::abs(est.value - truth), 3.0 * est.standard_error) << to_json(dtr).dump();
      ++checked;
    }
  EXPECT_GT(checked, 20);
}

}  // namespace
