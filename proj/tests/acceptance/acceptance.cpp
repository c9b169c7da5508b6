// Acceptance checks. Each criterion prints one PASS or FAIL line with the
// measured quantities; the exit status is nonzero when any selected
// criterion fails.
//
//   acceptance                  every criterion
//   acceptance --criterion 5    one criterion (repeatable)
//   acceptance --full           adds the 500-rep, n = 4000 run to criterion 5

#include "drdtr/drdtr.hpp"

#include "CLI11.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace drdtr;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [failed]");
  }
};

std::string fmt(const char* pattern, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, a);
  return buf;
}

double se_of_mean(std::span<const double> v) { return sample_sd(v) / std::sqrt(static_cast<double>(v.size())); }

std::vector<int> constant_leaves(const Dtr& dtr) {
  std::vector<int> out;
  for (const auto& p : dtr.policies) out.push_back(std::get<PolicyTree>(p).leaves().at(0));
  return out;
}

std::string pair_text(const std::vector<int>& v) {
  return "(" + std::to_string(v.at(0)) + "," + std::to_string(v.at(1)) + ")";
}

// ------------------------------------------------------------ criterion 1

Outcome analytic_backward_induction() {
  Outcome o;
  auto learn_constants = [](DgpKind kind, Method method) {
    LearnerConfig cfg;
    cfg.method = method;
    cfg.classes = {PolicyClass{0, {}}, PolicyClass{0, {}}};
    cfg.oracle = oracle_nuisances(kind);
    cfg.seed = 1;
    return learn(generate({kind, 100000, 11}).data, cfg).dtr;
  };
  const auto test = generate({DgpKind::appendix_d, 1000000, 12});
  const auto test_mod = generate({DgpKind::appendix_d_modified, 1000000, 13});

  const Dtr dr = learn_constants(DgpKind::appendix_d, Method::dr);
  const double w_dr = true_welfare(test, dr);
  o.check(constant_leaves(dr) == std::vector<int>{0, 0} && std::abs(w_dr - 0.6) <= 0.01,
          "dr " + pair_text(constant_leaves(dr)) + " welfare " + fmt("%.4f", w_dr));

  const Dtr dr_mod = learn_constants(DgpKind::appendix_d_modified, Method::dr);
  const double w_mod = true_welfare(test_mod, dr_mod);
  o.check(constant_leaves(dr_mod) == std::vector<int>{1, 1} && std::abs(w_mod - 1.0) <= 0.01,
          "modified dr " + pair_text(constant_leaves(dr_mod)) + " welfare " + fmt("%.4f", w_mod));

  const Dtr sim = learn_constants(DgpKind::appendix_d, Method::aipw_simultaneous);
  o.check(constant_leaves(sim) == std::vector<int>{1, 1},
          "simultaneous " + pair_text(constant_leaves(sim)) + " welfare " + fmt("%.4f", true_welfare(test, sim)));
  return o;
}

// ------------------------------------------------------------ criterion 2

Outcome identification_oracle() {
  Outcome o;
  const auto pop = generate({DgpKind::custom_discrete, 50000, 21});
  const auto oracle = oracle_nuisances(DgpKind::custom_discrete);
  const Matrix h1 = history_features(pop.data, 0);
  Rng rng(22);
  // Random depth-1 trees; stage-1 history is S_1 in {0, 1, 2}, stage-2
  // history is (A_1, S_1, S_2).
  auto random_tree = [&](std::size_t stage) {
    const std::size_t width = stage == 0 ? 1 : 3;
    const std::size_t f = static_cast<std::size_t>(rng.below(width));
    const double max_value = stage == 1 && f == 1 ? 2.0 : (stage == 0 ? 2.0 : 1.0);
    const double threshold = 0.5 + static_cast<double>(rng.below(static_cast<std::uint64_t>(max_value)));
    return PolicyTree(stage, 1, {{f, threshold}}, {static_cast<int>(rng.below(2)), static_cast<int>(rng.below(2))});
  };
  for (int k = 0; k < 5; ++k) {
    const Dtr dtr(std::vector<StagePolicy>{random_tree(0), random_tree(1)});
    const auto last = oracle_aipw_scores(pop.data, oracle, dtr, 1, nullptr);
    const auto first = oracle_aipw_scores(pop.data, oracle, dtr, 0, &last);
    std::vector<double> v(pop.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      v[i] = first.values(r, dtr.action(0, row_span(h1, r)));
    }
    const double truth = exact_welfare(DgpKind::custom_discrete, dtr);
    const double z = (mean(v) - truth) / se_of_mean(v);
    o.check(std::abs(z) < 3.0, "dtr " + std::to_string(k + 1) + " V1 " + fmt("%.4f", truth) + " z " + fmt("%.2f", z));
  }
  return o;
}

// ------------------------------------------------------------ criterion 3

/// Objective of the best tree by listing every candidate: thresholds at
/// -inf, +inf and midpoints between distinct values, every leaf labelling.
double brute_force_best(const Matrix& scores, const Matrix& x, int depth) {
  const auto n = x.rows();
  const auto d = static_cast<int>(scores.cols());
  std::vector<std::pair<std::size_t, double>> rules;
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    const Eigen::VectorXd col = x.col(f);
    std::vector<double> v(col.begin(), col.end());
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    rules.emplace_back(static_cast<std::size_t>(f), -INFINITY);
    rules.emplace_back(static_cast<std::size_t>(f), INFINITY);
    for (std::size_t j = 0; j + 1 < v.size(); ++j) rules.emplace_back(static_cast<std::size_t>(f), 0.5 * (v[j] + v[j + 1]));
  }
  const int leaves = 1 << depth;
  auto leaf_of = [&](Eigen::Index i, const std::vector<std::size_t>& node_rules) {
    int node = 0;
    for (int level = 0; level < depth; ++level) {
      const auto& [f, t] = rules[node_rules[static_cast<std::size_t>(node)]];
      node = 2 * node + (x(i, static_cast<Eigen::Index>(f)) < t ? 1 : 2);
    }
    return node - (leaves - 1);
  };
  double best = -INFINITY;
  const std::size_t internal = static_cast<std::size_t>(leaves - 1);
  std::vector<std::size_t> node_rules(internal, 0);
  for (;;) {
    // With the split rules fixed, each leaf independently takes its best arm.
    std::vector<std::vector<double>> sums(static_cast<std::size_t>(leaves), std::vector<double>(static_cast<std::size_t>(d), 0.0));
    for (Eigen::Index i = 0; i < n; ++i)
      for (int a = 0; a < d; ++a) sums[static_cast<std::size_t>(leaf_of(i, node_rules))][static_cast<std::size_t>(a)] += scores(i, a);
    double total = 0.0;
    for (const auto& s : sums) total += *std::max_element(s.begin(), s.end());
    best = std::max(best, total);
    std::size_t k = 0;
    while (k < internal && ++node_rules[k] == rules.size()) node_rules[k++] = 0;
    if (k == internal) break;
  }
  return best;
}

Outcome exact_search_oracle() {
  Outcome o;
  Rng rng(31);
  int agree = 0;
  double worst_gap = 0.0;
  for (int instance = 0; instance < 200; ++instance) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(11));
    const auto p = static_cast<Eigen::Index>(1 + rng.below(3));
    const auto d = static_cast<Eigen::Index>(2 + rng.below(2));
    const int depth = 1 + static_cast<int>(rng.below(2));
    Matrix x(n, p), scores(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index f = 0; f < p; ++f) x(i, f) = static_cast<double>(rng.below(6));
      // Integer scores keep every sum exact.
      for (Eigen::Index a = 0; a < d; ++a) scores(i, a) = static_cast<double>(rng.below(21)) - 10.0;
    }
    const double found = exact_tree_search(scores, x, depth).objective;
    const double brute = brute_force_best(scores, x, depth);
    if (found == brute) ++agree;
    worst_gap = std::max(worst_gap, std::abs(found - brute));
  }
  o.check(agree == 200, std::to_string(agree) + "/200 exact matches, largest gap " + fmt("%g", worst_gap));
  return o;
}

// ------------------------------------------------------------ criterion 4

Outcome double_robustness() {
  using namespace sim_detail;
  Outcome o;
  const auto pop = generate({DgpKind::custom_discrete, 20000, 41});
  const auto& data = pop.data;
  const auto oracle = oracle_nuisances(DgpKind::custom_discrete);
  const Dtr any = constant_dtr(std::vector<int>{0, 0});
  const Matrix h = history_features(data, 1);
  const auto n = h.rows();

  // E[Y_2(A_1, a)] under the observed first-stage assignment, by enumeration.
  double truth[2] = {0.0, 0.0};
  for (int s1 = 0; s1 < 3; ++s1)
    for (int a1 = 0; a1 < 2; ++a1)
      for (int s2 = 0; s2 < 2; ++s2) {
        const auto k = static_cast<std::size_t>(s1);
        const double p_a1 = a1 == 1 ? kA1Prob[k] : 1.0 - kA1Prob[k];
        const double p_s2 = s2 == 1 ? kS2Prob[k][static_cast<std::size_t>(a1)] : 1.0 - kS2Prob[k][static_cast<std::size_t>(a1)];
        for (int a = 0; a < 2; ++a) truth[a] += kS1Prob[k] * p_a1 * p_s2 * y2_mean(s1, a1, s2, a);
      }

  // Constructed misspecifications: Q shifted up by 0.25, and propensities
  // replaced by their complements (both stay within [0.15, 0.85]).
  auto q_true = [&](Eigen::Index r, int a) { return oracle.q(1, row_span(h, r), a, any); };
  auto q_wrong = [&](Eigen::Index r, int a) { return q_true(r, a) + 0.25; };
  auto e_true = [&](Eigen::Index r, int a) { return oracle.propensity(1, row_span(h, r), a); };
  auto e_wrong = [&](Eigen::Index r, int a) { return 1.0 - e_true(r, a); };

  auto column = [&](const std::function<double(Eigen::Index, int)>& q, const std::function<double(Eigen::Index, int)>& e,
                    bool use_q, bool use_weight, int a) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto i = static_cast<std::size_t>(r);
      const bool observed = data.action(1, i) == a;
      const double base = use_q ? q(r, a) : 0.0;
      const double residual = observed && use_weight ? (data.outcome(1, i) - base) / e(r, a) : 0.0;
      v[i] = base + residual;
    }
    return v;
  };
  auto z_score = [&](const std::vector<double>& v, int a) { return (mean(v) - truth[a]) / se_of_mean(v); };

  for (int a = 0; a < 2; ++a) {
    const double z_aipw_q = z_score(column(q_wrong, e_true, true, true, a), a);
    const double z_aipw_e = z_score(column(q_true, e_wrong, true, true, a), a);
    const double z_plugin = z_score(column(q_wrong, e_true, true, false, a), a);
    const double z_ipw = z_score(column(q_true, e_wrong, false, true, a), a);
    const std::string arm = "a=" + std::to_string(a) + " ";
    o.check(std::abs(z_aipw_q) < 3.0, arm + "aipw(wrong Q) z " + fmt("%.2f", z_aipw_q));
    o.check(std::abs(z_aipw_e) < 3.0, arm + "aipw(wrong e) z " + fmt("%.2f", z_aipw_e));
    o.check(std::abs(z_plugin) > 5.0, arm + "plug-in(wrong Q) z " + fmt("%.1f", z_plugin));
    o.check(std::abs(z_ipw) > 5.0, arm + "ipw(wrong e) z " + fmt("%.1f", z_ipw));
  }
  return o;
}

// ------------------------------------------------------------ criterion 5

Outcome table_ordering(bool full) {
  Outcome o;
  const auto classes = benchmark_classes(2);
  const std::vector<BenchmarkMethod> methods{benchmark_method("dr", classes), benchmark_method("ipw", classes),
                                             benchmark_method("q_search", classes)};
  BenchmarkOptions opt;
  opt.dgp = DgpKind::dgp1;
  opt.n_train = 1000;
  opt.n_test = 50000;
  opt.reps = 100;
  opt.master_seed = 5;
  const auto report = run_benchmark(methods, opt);
  const double dr = report.summary("dr").mean, ipw = report.summary("ipw").mean, qs = report.summary("q_search").mean;
  o.check(dr > ipw, "dr " + fmt("%.3f", dr) + " > ipw " + fmt("%.3f", ipw));
  o.check(dr > qs, "dr > q_search " + fmt("%.3f", qs));
  o.check(dr >= 0.45 && dr <= 0.75, "dr mean in [0.45, 0.75]");
  std::size_t failures = 0;
  for (const auto& s : report.summaries) failures += s.failures;
  o.check(failures == 0, std::to_string(failures) + " failed runs");
  if (full) {
    opt.n_train = 4000;
    opt.reps = 500;
    const auto big = run_benchmark({methods[0]}, opt);
    const double m = big.summary("dr").mean;
    o.check(m >= 0.62 && m <= 0.82, "full run dr " + fmt("%.3f", m) + " in [0.62, 0.82]");
  }
  return o;
}

// ------------------------------------------------------------ criterion 6

Outcome misspecification() {
  Outcome o;
  const auto classes = benchmark_classes(2);
  std::vector<BenchmarkMethod> methods;
  for (const char* label : {"dr+missq", "dr+missps", "q_learn+missq", "ipw+missps"})
    methods.push_back(benchmark_method(label, classes));
  BenchmarkOptions opt;
  opt.dgp = DgpKind::dgp1;
  opt.n_train = 2000;
  opt.n_test = 50000;
  opt.reps = 50;
  opt.master_seed = 6;
  const auto report = run_benchmark(methods, opt);
  const double q_learn = report.summary("q_learn+missq").mean, ipw = report.summary("ipw+missps").mean;
  for (const char* dr : {"dr+missq", "dr+missps"}) {
    const double m = report.summary(dr).mean;
    o.check(m > q_learn && m > ipw, std::string(dr) + " " + fmt("%.3f", m));
  }
  o.check(true, "q_learn+missq " + fmt("%.3f", q_learn) + ", ipw+missps " + fmt("%.3f", ipw));
  return o;
}

// ------------------------------------------------------------ criterion 7

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  Outcome o;
  const fs::path dir = fs::path(DRDTR_TEST_TMP) / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto run = [&](const std::string& args, const std::string& stdout_name) {
    const std::string cmd = "cd '" + dir.string() + "' && '" + std::string(DRDTR_CLI_PATH) + "' " + args + " > " +
                            stdout_name + " 2> /dev/null";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  auto same = [&](const std::string& a, const std::string& b) { return slurp(dir / a) == slurp(dir / b); };

  bool ok = true;
  ok &= run("simulate --dgp dgp1 --n 600 --seed 3 --out d1.csv --sidecar s1.csv --schema-out d.cfg", "o1") == 0;
  ok &= run("simulate --dgp dgp1 --n 600 --seed 3 --out d2.csv --sidecar s2.csv --jobs 3", "o2") == 0;
  o.check(ok && same("d1.csv", "d2.csv") && same("s1.csv", "s2.csv"), "simulate");

  const std::string learn = "learn --method dr --data d1.csv --schema d.cfg --depth 1,2 --trees 30 --seed 9";
  ok = run(learn + " --out p1.json", "o3") == 0 && run(learn + " --jobs 3 --out p2.json", "o4") == 0;
  o.check(ok && same("p1.json", "p2.json"), "learn");

  const std::string eval = "evaluate --data d1.csv --schema d.cfg --policy p1.json --sidecar s1.csv --true-welfare "
                           "--trees 30 --seed 9";
  ok = run(eval + " --out e1.json", "t1") == 0 && run(eval + " --jobs 3 --out e2.json", "t2") == 0;
  o.check(ok && same("e1.json", "e2.json") && same("t1", "t2"), "evaluate");

  const std::string bench = "benchmark --dgp dgp1 --methods dr,ipw,q_learn,q_search --n 300 --n-test 2000 --reps 4 "
                            "--trees 10 --seed 4";
  ok = run(bench, "b1.jsonl") == 0 && run(bench, "b2.jsonl") == 0 && run(bench + " --jobs 3", "b3.jsonl") == 0;
  o.check(ok && same("b1.jsonl", "b2.jsonl") && same("b1.jsonl", "b3.jsonl"), "benchmark under --jobs 1 and 3");

  // Library-level checks: fold partitions and tie-breaks do not depend on
  // the worker count.
  const auto f1 = make_folds(1000, 5, 77), f2 = make_folds(1000, 5, 77);
  o.check(f1.fold_of_unit == f2.fold_of_unit, "folds");
  Rng rng(71);
  bool ties_ok = true;
  for (int k = 0; k < 20; ++k) {
    Matrix x(40, 3), s(40, 3);
    for (Eigen::Index i = 0; i < 40; ++i) {
      for (Eigen::Index f = 0; f < 3; ++f) x(i, f) = static_cast<double>(rng.below(4));
      for (Eigen::Index a = 0; a < 3; ++a) s(i, a) = static_cast<double>(rng.below(3));
    }
    const auto serial = exact_tree_search(s, x, 2, {}, {}, 0, {}, 1);
    const auto parallel = exact_tree_search(s, x, 2, {}, {}, 0, {}, 4);
    ties_ok = ties_ok && serial.tree == parallel.tree && serial.objective == parallel.objective;
  }
  o.check(ties_ok, "tree tie-breaks");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> selected;
  bool full = false;
  app.add_option("--criterion", selected, "Criterion number (repeatable); default all")->check(CLI::Range(1, 7));
  app.add_flag("--full", full, "Add the 500-rep, n = 4000 run to criterion 5");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7};

  const std::vector<std::function<Outcome()>> criteria{
      analytic_backward_induction, identification_oracle, exact_search_oracle, double_robustness,
      [full] { return table_ordering(full); }, misspecification, determinism};
  bool all = true;
  for (int c : selected) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[static_cast<std::size_t>(c - 1)]();
    } catch (const std::exception& e) {
      o.check(false, std::string("error: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << "criterion " << c << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << "  ("
              << fmt("%.1f", secs) << " s)" << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
