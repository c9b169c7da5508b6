// drdtr: simulate panels, learn dynamic treatment regimes, evaluate them and
// run Monte Carlo benchmarks.

#include "drdtr/drdtr.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace drdtr;
using nlohmann::json;

const std::vector<std::string> kDgpNames{"dgp1", "dgp2", "appendix_d", "appendix_d_modified", "custom_discrete"};
const std::vector<std::string> kMethodNames{"dr", "q_learn", "q_search", "ipw", "aipw_simultaneous"};
const std::vector<std::string> kRegressorNames{"random_forest", "linear"};

/// Flags shared by learn and evaluate; each overrides the config file only
/// when given on the command line.
struct LearnerFlags {
  std::string method = "dr";
  std::vector<int> depth;
  int folds = 5;
  double eta = 0.01;
  std::string propensity = "random_forest";
  std::string q = "random_forest";
  bool first_stage_only = false;
  int trees = 100;
  double mtry = 1.0;
  int min_leaf = 5;
  int max_depth = 0;
  std::uint64_t seed = 0;
  int jobs = 1;

  CLI::Option* method_opt = nullptr;
  CLI::Option* depth_opt = nullptr;
  CLI::Option* folds_opt = nullptr;
  CLI::Option* eta_opt = nullptr;
  CLI::Option* propensity_opt = nullptr;
  CLI::Option* q_opt = nullptr;
  CLI::Option* first_stage_opt = nullptr;
  CLI::Option* trees_opt = nullptr;
  CLI::Option* mtry_opt = nullptr;
  CLI::Option* min_leaf_opt = nullptr;
  CLI::Option* max_depth_opt = nullptr;

  void add_to(CLI::App& cmd, bool with_method) {
    if (with_method)
      method_opt = cmd.add_option("--method", method, "Learner")->check(CLI::IsMember(kMethodNames));
    depth_opt = cmd.add_option("--depth", depth, "Tree depth per stage, comma separated")->delimiter(',');
    folds_opt = cmd.add_option("--k", folds, "Cross-fitting folds")->check(CLI::Range(2, 1000));
    eta_opt = cmd.add_option("--eta", eta, "Propensity floor");
    propensity_opt = cmd.add_option("--propensity", propensity, "Propensity backend")->check(CLI::IsMember(kRegressorNames));
    q_opt = cmd.add_option("--q", q, "Q-function backend")->check(CLI::IsMember(kRegressorNames));
    first_stage_opt = cmd.add_flag("--first-stage-only", first_stage_only, "Propensities use first-stage states only");
    trees_opt = cmd.add_option("--trees", trees, "Trees per forest")->check(CLI::PositiveNumber);
    mtry_opt = cmd.add_option("--mtry", mtry, "Share of features tried per split");
    min_leaf_opt = cmd.add_option("--min-leaf", min_leaf, "Minimum leaf size")->check(CLI::PositiveNumber);
    max_depth_opt = cmd.add_option("--max-depth", max_depth, "Forest tree depth limit (0: none)");
    cmd.add_option("--seed", seed, "Master seed")->required();
    cmd.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  }

  LearnerConfig build(const RunConfig& file, const StageSchema& schema) const {
    LearnerConfig cfg;
    cfg.classes = benchmark_classes(schema.num_stages());
    file.apply(cfg);
    auto given = [](const CLI::Option* o) { return o != nullptr && o->count() > 0; };
    if (given(method_opt)) cfg.method = parse_method(method);
    if (given(folds_opt)) cfg.folds = folds;
    if (given(eta_opt)) cfg.eta = eta;
    if (given(propensity_opt)) cfg.propensity.kind = parse_regressor_kind(propensity);
    if (given(q_opt)) cfg.q.kind = parse_regressor_kind(q);
    if (given(first_stage_opt)) cfg.propensity.first_stage_features_only = first_stage_only;
    for (ForestParams* f : {&cfg.propensity.forest, &cfg.q.forest}) {
      if (given(trees_opt)) f->num_trees = trees;
      if (given(mtry_opt)) f->mtry_fraction = mtry;
      if (given(min_leaf_opt)) f->min_leaf = min_leaf;
      if (given(max_depth_opt)) f->max_depth = max_depth;
    }
    if (given(depth_opt)) {
      if (depth.size() != schema.num_stages())
        throw Error("--depth lists " + std::to_string(depth.size()) + " depths for " +
                    std::to_string(schema.num_stages()) + " stages");
      for (std::size_t t = 0; t < depth.size(); ++t) cfg.classes[t].depth = depth[t];
    }
    cfg.seed = seed;
    cfg.jobs = jobs;
    cfg.validate(schema);
    return cfg;
  }
};

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
}

std::string fixed(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string dgp;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::string sidecar;
  std::string schema_out;
  int jobs = 1;
};

int run_simulate(const SimulateArgs& a) {
  const DgpKind kind = parse_dgp_kind(a.dgp);
  const auto pop = generate({kind, a.n, a.seed}, a.jobs);
  write_csv(a.out, pop.data);
  if (!a.sidecar.empty()) write_sidecar(a.sidecar, pop);
  if (!a.schema_out.empty())
    write_text(a.schema_out, schema_config_text(pop.data.schema(), benchmark_classes(2)));
  return 0;
}

// ------------------------------------------------------------------- learn

struct LearnArgs {
  LearnerFlags flags;
  std::string data;
  std::string schema;
  std::string out;
};

int run_learn(const LearnArgs& a) {
  const RunConfig file = load_run_config(a.schema);
  const StageSchema schema = file.schema();
  const PanelDataset data = load_csv(a.data, schema);
  const LearnerConfig cfg = a.flags.build(file, schema);
  const LearnResult result = learn(data, cfg);

  json out{{"method", to_string(cfg.method)}, {"seed", cfg.seed}, {"folds", cfg.folds}, {"eta", cfg.eta},
           {"objectives", result.objectives}, {"warnings", result.warnings}};
  bool has_trees = true;
  for (std::size_t t = 0; t < result.dtr.num_stages(); ++t) has_trees = has_trees && result.dtr.tree(t) != nullptr;
  if (has_trees) {
    out["dtr"] = to_json(result.dtr);
  } else {
    out["dtr"] = nullptr;
    out["note"] = "pointwise Q-argmax policies have no tree form";
  }
  if (!result.q_training_r2.empty()) out["q_training_r2"] = result.q_training_r2;
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  write_text(a.out, out.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  LearnerFlags flags;
  std::string data;
  std::string schema;
  std::string policy;
  std::string sidecar;
  bool true_welfare = false;
  std::string oracle_dgp;
  std::string out;
};

int run_evaluate(const EvaluateArgs& a) {
  if (a.true_welfare && a.sidecar.empty())
    throw Error("--true-welfare needs the potential-outcome sidecar written by 'simulate --sidecar'");
  const RunConfig file = load_run_config(a.schema);
  const StageSchema schema = file.schema();
  PanelDataset data = load_csv(a.data, schema);
  LearnerConfig cfg = a.flags.build(file, schema);
  if (!a.oracle_dgp.empty()) cfg.oracle = oracle_nuisances(parse_dgp_kind(a.oracle_dgp));
  const Dtr dtr = load_dtr(a.policy);
  if (dtr.num_stages() != schema.num_stages()) throw Error("policy stage count differs from the schema");

  const auto folds = learner_folds(data, cfg);
  const auto report = aipw_welfare_report(data, dtr, cfg, folds, uniform_comparators(schema));

  json out{{"seed", cfg.seed},
           {"folds", cfg.folds},
           {"nuisances", cfg.oracle ? "oracle" : "cross_fitted"},
           {"aipw", {{"welfare", report.estimate.value}, {"se", report.estimate.standard_error}}}};
  std::ostringstream table;
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %10s %10s\n", "quantity", "estimate", "se");
  table << line;
  std::snprintf(line, sizeof line, "%-24s %10s %10s\n", "aipw welfare", fixed(report.estimate.value).c_str(),
                fixed(report.estimate.standard_error).c_str());
  table << line;

  json contrasts = json::array();
  for (const auto& c : report.contrasts) {
    contrasts.push_back({{"comparator", c.label},
                         {"comparator_welfare", c.comparator.value},
                         {"comparator_se", c.comparator.standard_error},
                         {"contrast", c.difference.value},
                         {"contrast_se", c.difference.standard_error}});
    std::snprintf(line, sizeof line, "%-24s %10s %10s\n", ("contrast vs " + c.label).c_str(),
                  fixed(c.difference.value).c_str(), fixed(c.difference.standard_error).c_str());
    table << line;
  }
  out["contrasts"] = contrasts;

  json shares = json::array();
  for (std::size_t t = 0; t < schema.num_stages(); ++t) {
    const auto acts = policy_actions(dtr, t, history_features(data, t));
    std::vector<double> share(static_cast<std::size_t>(schema.actions_per_stage[t]), 0.0);
    for (int act : acts) share[static_cast<std::size_t>(act)] += 1.0 / static_cast<double>(acts.size());
    shares.push_back(share);
    for (std::size_t act = 0; act < share.size(); ++act) {
      std::snprintf(line, sizeof line, "%-24s %10s %10s\n",
                    ("share stage " + std::to_string(t + 1) + " arm " + std::to_string(act)).c_str(),
                    fixed(share[act]).c_str(), "-");
      table << line;
    }
  }
  out["observed_history_shares"] = shares;

  if (a.true_welfare) {
    const auto pop = load_sidecar(a.sidecar, std::move(data));
    const double w = true_welfare(pop, dtr, cfg.jobs);
    out["true_welfare"] = w;
    std::snprintf(line, sizeof line, "%-24s %10s %10s\n", "true welfare", fixed(w).c_str(), "-");
    table << line;
  }
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << table.str();
  if (!a.out.empty()) write_text(a.out, out.dump(2) + "\n");
  return 0;
}

// --------------------------------------------------------------- benchmark

struct BenchmarkArgs {
  std::string dgp = "dgp1";
  std::vector<std::string> methods{"dr", "ipw", "q_learn", "q_search"};
  std::size_t n = 1000;
  std::size_t n_test = 50000;
  int reps = 1;
  std::uint64_t seed = 0;
  std::string misspecify;
  int folds = 5;
  double eta = 0.01;
  int trees = 0;
  double mtry = 0.0;
  int min_leaf = 0;
  std::string out;
  bool timing = false;
  int jobs = 1;
};

int run_benchmark_cmd(const BenchmarkArgs& a) {
  BenchmarkOptions opt;
  opt.dgp = parse_dgp_kind(a.dgp);
  opt.n_train = a.n;
  opt.n_test = a.n_test;
  opt.reps = a.reps;
  opt.master_seed = a.seed;
  opt.jobs = a.jobs;
  opt.timing = a.timing;
  ForestParams forest = benchmark_forest();
  if (a.trees > 0) forest.num_trees = a.trees;
  if (a.mtry > 0.0) forest.mtry_fraction = a.mtry;
  if (a.min_leaf > 0) forest.min_leaf = a.min_leaf;
  std::string suffix;
  if (a.misspecify == "q") suffix = "+missq";
  else if (a.misspecify == "ps") suffix = "+missps";
  const auto classes = benchmark_classes(dgp_schema(opt.dgp).num_stages());
  std::vector<BenchmarkMethod> methods;
  for (const auto& m : a.methods) methods.push_back(benchmark_method(m + suffix, classes, forest, a.folds, a.eta));

  const auto report = run_benchmark(methods, opt);
  std::ostringstream jsonl;
  write_jsonl(jsonl, report);
  if (a.out.empty()) {
    std::cout << jsonl.str();
  } else {
    write_text(a.out, jsonl.str());
    write_table(std::cout, report);
  }
  std::size_t failures = 0;
  for (const auto& s : report.summaries) failures += s.failures;
  if (failures > 0) {
    std::cerr << "error: " << failures << " learner run(s) failed; see the error fields of the rep records\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Doubly robust learning of dynamic treatment regimes"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Draw a panel from a simulation design");
  simulate->add_option("--dgp", sim.dgp, "Design")->required()->check(CLI::IsMember(kDgpNames));
  simulate->add_option("--n", sim.n, "Units")->required()->check(CLI::PositiveNumber);
  simulate->add_option("--seed", sim.seed, "Master seed")->required();
  simulate->add_option("--out", sim.out, "Dataset CSV")->required();
  simulate->add_option("--sidecar", sim.sidecar, "Potential-outcome CSV");
  simulate->add_option("--schema-out", sim.schema_out, "Schema config for learn/evaluate");
  simulate->add_option("--jobs", sim.jobs, "Worker threads")->check(CLI::PositiveNumber);

  LearnArgs lrn;
  auto* learn_cmd = app.add_subcommand("learn", "Learn a DTR from a panel");
  lrn.flags.add_to(*learn_cmd, true);
  learn_cmd->add_option("--data", lrn.data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  learn_cmd->add_option("--schema,--config", lrn.schema, "Schema/run config")->required()->check(CLI::ExistingFile);
  learn_cmd->add_option("--out", lrn.out, "DTR JSON (default: stdout)");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Estimate the welfare of a stored DTR");
  ev.flags.add_to(*evaluate, false);
  evaluate->add_option("--data", ev.data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--schema,--config", ev.schema, "Schema/run config")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--policy", ev.policy, "DTR JSON")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--sidecar", ev.sidecar, "Potential-outcome CSV")->check(CLI::ExistingFile);
  evaluate->add_flag("--true-welfare", ev.true_welfare, "Also report the welfare on the potential outcomes");
  evaluate->add_option("--oracle-dgp", ev.oracle_dgp, "Use the design's true nuisances")
      ->check(CLI::IsMember(std::vector<std::string>{"appendix_d", "appendix_d_modified", "custom_discrete"}));
  evaluate->add_option("--out", ev.out, "Report JSON");

  BenchmarkArgs bm;
  auto* bench = app.add_subcommand("benchmark", "Monte Carlo comparison of learners");
  bench->add_option("--dgp", bm.dgp, "Design")->check(CLI::IsMember(kDgpNames));
  bench->add_option("--methods", bm.methods, "Learners, comma separated")
      ->delimiter(',')
      ->check(CLI::IsMember(kMethodNames));
  bench->add_option("--n", bm.n, "Training units per rep")->check(CLI::PositiveNumber);
  bench->add_option("--n-test", bm.n_test, "Test units per rep")->check(CLI::PositiveNumber);
  bench->add_option("--reps", bm.reps, "Repetitions")->check(CLI::PositiveNumber);
  bench->add_option("--seed", bm.seed, "Master seed")->required();
  bench->add_option("--misspecify", bm.misspecify, "Linear Q (q) or first-stage logistic propensities (ps)")
      ->check(CLI::IsMember(std::vector<std::string>{"q", "ps"}));
  bench->add_option("--k", bm.folds, "Cross-fitting folds")->check(CLI::Range(2, 1000));
  bench->add_option("--eta", bm.eta, "Propensity floor");
  bench->add_option("--trees", bm.trees, "Trees per forest")->check(CLI::PositiveNumber);
  bench->add_option("--mtry", bm.mtry, "Share of features tried per split");
  bench->add_option("--min-leaf", bm.min_leaf, "Minimum leaf size")->check(CLI::PositiveNumber);
  bench->add_option("--out", bm.out, "JSON-lines report (default: stdout)");
  bench->add_flag("--timing", bm.timing, "Add wall-clock milliseconds to rep records");
  bench->add_option("--jobs", bm.jobs, "Reps run concurrently")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  try {
    if (simulate->parsed()) return run_simulate(sim);
    if (learn_cmd->parsed()) return run_learn(lrn);
    if (evaluate->parsed()) return run_evaluate(ev);
    return run_benchmark_cmd(bm);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
