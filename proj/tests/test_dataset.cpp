#include "drdtr/csv.hpp"
#include "drdtr/dataset.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

using namespace drdtr;

namespace {

StageSchema two_stage_schema() { return StageSchema::uniform(2, 2, {1, 1}, {false, true}); }

const char* kThreeRows =
    "unit_id,a1,a2,s1_1,s2_1,y1,y2\n"
    "u1,0,1,0.5,1.25,,2\n"
    "u2,1,0,-1,3,,0.5\n"
    "u3,1,1,2,0,,-1\n";

PanelDataset random_panel(std::size_t n, std::uint64_t seed, const StageSchema& schema) {
  Rng rng(seed);
  std::vector<std::string> ids;
  std::vector<std::vector<int>> acts(schema.num_stages());
  std::vector<Matrix> states(schema.num_stages());
  std::vector<Vector> ys(schema.num_stages());
  for (std::size_t i = 0; i < n; ++i) ids.push_back("id" + std::to_string(i));
  for (std::size_t t = 0; t < schema.num_stages(); ++t) {
    states[t].resize(static_cast<Eigen::Index>(n), schema.state_dims[t]);
    ys[t].resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      acts[t].push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(schema.actions_per_stage[t]))));
      for (int j = 0; j < schema.state_dims[t]; ++j)
        states[t](static_cast<Eigen::Index>(i), j) = rng.normal() * 1e3;
      ys[t](static_cast<Eigen::Index>(i)) = rng.normal() / 3.0;
    }
  }
  return PanelDataset(schema, ids, acts, states, ys);
}

}  // namespace

TEST(Csv, ParsesThreeRowFile) {
  std::istringstream in(kThreeRows);
  const auto data = read_csv(in, two_stage_schema());
  EXPECT_EQ(data.size(), 3u);
  EXPECT_EQ(data.unit_id(1), "u2");
  EXPECT_EQ(data.action(1, 0), 1);
  EXPECT_DOUBLE_EQ(data.states(1)(0, 0), 1.25);
  EXPECT_DOUBLE_EQ(data.outcome(1, 2), -1.0);
  EXPECT_DOUBLE_EQ(data.outcome(0, 2), 0.0);
}

TEST(Csv, ColumnOrderIsFree) {
  std::istringstream in(
      "y2,a2,unit_id,extra,s2_1,a1,s1_1,y1\n"
      "2,1,u1,x,1.25,0,0.5,\n");
  const auto data = read_csv(in, two_stage_schema());
  EXPECT_EQ(data.action(1, 0), 1);
  EXPECT_DOUBLE_EQ(data.states(0)(0, 0), 0.5);
}

TEST(Csv, OutOfRangeActionNamesTheLine) {
  std::istringstream in(
      "unit_id,a1,a2,s1_1,s2_1,y1,y2\n"
      "u1,0,1,0.5,1.25,,2\n"
      "u2,2,0,-1,3,,0.5\n");
  try {
    read_csv(in, two_stage_schema());
    FAIL() << "expected a range error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'a1'"), std::string::npos) << msg;
  }
}

TEST(Csv, MissingColumnAndBadCellsAreReported) {
  std::istringstream missing("unit_id,a1,s1_1,s2_1,y1,y2\nu1,0,1,1,,1\n");
  EXPECT_THROW(read_csv(missing, two_stage_schema()), Error);
  std::istringstream text("unit_id,a1,a2,s1_1,s2_1,y1,y2\nu1,0,1,abc,1,,1\n");
  try {
    read_csv(text, two_stage_schema());
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("s1_1"), std::string::npos);
  }
  std::istringstream frac("unit_id,a1,a2,s1_1,s2_1,y1,y2\nu1,0.5,1,1,1,,1\n");
  EXPECT_THROW(read_csv(frac, two_stage_schema()), Error);
  std::istringstream empty_y("unit_id,a1,a2,s1_1,s2_1,y1,y2\nu1,0,1,1,1,,\n");
  EXPECT_THROW(read_csv(empty_y, two_stage_schema()), Error);
}

TEST(Csv, RoundTripIsIdentity) {
  const auto schema = StageSchema{{2, 3, 2}, {2, 0, 3}, {true, false, true}};
  const auto data = random_panel(40, 11, schema);
  std::ostringstream first;
  write_csv(first, data);
  std::istringstream in(first.str());
  const auto back = read_csv(in, schema);
  std::ostringstream second;
  write_csv(second, back);
  EXPECT_EQ(first.str(), second.str());
  for (std::size_t t = 0; t < schema.num_stages(); ++t) {
    EXPECT_EQ(back.actions(t), data.actions(t));
    EXPECT_TRUE(back.states(t) == data.states(t));
    EXPECT_TRUE(back.outcomes(t) == data.outcomes(t));
  }
}

TEST(Dataset, RejectsInvalidPanels) {
  const auto schema = two_stage_schema();
  Matrix s(1, 1);
  s << 0.0;
  Vector y(1);
  y << 1.0;
  EXPECT_THROW(PanelDataset(schema, {"a"}, {{2}, {0}}, {s, s}, {y, y}), Error);
  EXPECT_THROW(PanelDataset(schema, {"a"}, {{0}, {0}}, {s, Matrix(1, 2)}, {y, y}), Error);
  EXPECT_THROW(PanelDataset(schema, {}, {{}, {}}, {Matrix(0, 1), Matrix(0, 1)}, {Vector(0), Vector(0)}),
               Error);
  EXPECT_THROW((StageSchema{{2, 1}, {1, 1}, {true, true}}.validate()), Error);
}

TEST(Dataset, AbsentOutcomesAreZeroed) {
  const auto schema = two_stage_schema();
  Matrix s(1, 1);
  s << 0.0;
  Vector y(1);
  y << 4.0;
  const PanelDataset data(schema, {"a"}, {{0}, {1}}, {s, s}, {y, y});
  EXPECT_EQ(data.outcome(0, 0), 0.0);
  EXPECT_EQ(data.outcome(1, 0), 4.0);
  EXPECT_EQ(data.outcome_sum(0), 4.0);
}

TEST(History, FirstStageIsStateBlock) {
  const auto schema = StageSchema{{2, 2}, {2, 1}, {false, true}};
  const auto data = random_panel(5, 3, schema);
  const Matrix h1 = history_features(data, 0);
  EXPECT_TRUE(h1 == data.states(0));
}

TEST(History, WidthMatchesDefinition) {
  const auto schema = StageSchema{{2, 2}, {2, 1}, {false, true}};
  EXPECT_EQ(schema.history_width(1), 4u);
  const auto data = random_panel(5, 3, schema);
  EXPECT_EQ(history_features(data, 1).cols(), 4);
  const auto big = StageSchema{{2, 3, 2, 4}, {3, 0, 2, 5}, {true, true, false, true}};
  for (std::size_t t = 0; t < 4; ++t) {
    std::size_t expected = t;
    for (std::size_t s = 0; s <= t; ++s) expected += static_cast<std::size_t>(big.state_dims[s]);
    EXPECT_EQ(big.history_width(t), expected);
    EXPECT_EQ(history_columns(big, t).size(), expected);
  }
  EXPECT_THROW(history_features(data, 2), Error);
}

TEST(History, ColumnsArePrefixPreservingAfterInsertingAction) {
  const auto schema = StageSchema{{2, 3, 2}, {2, 1, 3}, {false, true, true}};
  const auto data = random_panel(12, 5, schema);
  for (std::size_t t = 0; t + 1 < schema.num_stages(); ++t) {
    // Column identity map: inserting a_t after the existing action block of
    // stage t and appending the s_{t+1} block yields stage t+1's layout.
    auto cols = history_columns(schema, t);
    cols.insert(cols.begin() + static_cast<std::ptrdiff_t>(t), HistoryColumn{HistoryColumn::Kind::action, t, 0});
    for (int j = 0; j < schema.state_dims[t + 1]; ++j)
      cols.push_back({HistoryColumn::Kind::state, t + 1, static_cast<std::size_t>(j)});
    EXPECT_EQ(cols, history_columns(schema, t + 1));

    const Matrix ht = history_features(data, t);
    const Matrix hn = history_features(data, t + 1);
    const auto next_cols = history_columns(schema, t + 1);
    const auto cur_cols = history_columns(schema, t);
    for (std::size_t c = 0; c < cur_cols.size(); ++c) {
      const auto it = std::find(next_cols.begin(), next_cols.end(), cur_cols[c]);
      ASSERT_NE(it, next_cols.end());
      const auto nc = static_cast<Eigen::Index>(it - next_cols.begin());
      EXPECT_TRUE(ht.col(static_cast<Eigen::Index>(c)) == hn.col(nc));
    }
    for (std::size_t i = 0; i < data.size(); ++i)
      EXPECT_EQ(hn(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)), data.action(t, i));
  }
}

TEST(Folds, EvenSplit) {
  const auto f = make_folds(10, 5, 1);
  for (int k = 0; k < 5; ++k) EXPECT_EQ(f.members(k).size(), 2u);
}

TEST(Folds, UnevenSplitSizes) {
  const auto f = make_folds(7, 5, 9);
  std::vector<std::size_t> sizes;
  for (int k = 0; k < 5; ++k) sizes.push_back(f.members(k).size());
  std::sort(sizes.begin(), sizes.end());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{1, 1, 1, 2, 2}));
}

TEST(Folds, DeterministicAndPartition) {
  for (std::uint64_t seed : {0ULL, 1ULL, 77ULL}) {
    for (std::size_t n : {2u, 13u, 100u, 1001u}) {
      for (int k : {2, 3, 5}) {
        if (static_cast<std::size_t>(k) > n) continue;
        const auto a = make_folds(n, k, seed);
        EXPECT_EQ(a, make_folds(n, k, seed));
        std::set<std::size_t> all;
        std::size_t lo = n, hi = 0;
        for (int f = 0; f < k; ++f) {
          const auto m = a.members(f);
          lo = std::min(lo, m.size());
          hi = std::max(hi, m.size());
          for (auto i : m) EXPECT_TRUE(all.insert(i).second);
          EXPECT_EQ(a.complement(f).size() + m.size(), n);
        }
        EXPECT_EQ(all.size(), n);
        EXPECT_LE(hi - lo, 1u);
      }
    }
  }
  EXPECT_NE(make_folds(100, 5, 1).fold_of_unit, make_folds(100, 5, 2).fold_of_unit);
}

TEST(Folds, RejectsBadCounts) {
  EXPECT_THROW(make_folds(3, 5, 1), Error);
  EXPECT_THROW(make_folds(3, 1, 1), Error);
}

TEST(Rng, DerivedStreamsAreStable) {
  EXPECT_EQ(derive_seed(5, {1, 2}), derive_seed(5, {1, 2}));
  EXPECT_NE(derive_seed(5, {1, 2}), derive_seed(5, {2, 1}));
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
  Rng c(1);
  double s = 0.0, ss = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = c.normal();
    s += z;
    ss += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(ss / n, 1.0, 0.02);
}
