#ifndef DRDTR_BENCHMARK_HPP_
#define DRDTR_BENCHMARK_HPP_

// Monte Carlo harness. Rep r uses rep_seed = derive_seed(master, {r}); its
// training panel, test panel and fold partition come from label-tagged
// children of rep_seed, and each method's nuisance seed is
// derive_seed(rep_seed, {label_tag(method label), method seed}), so methods
// never share random streams.

#include "drdtr/learners.hpp"
#include "drdtr/simulate.hpp"

#include "json.hpp"

#include <chrono>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace drdtr {

/// Forest settings for repeated simulation runs: smaller ensembles and a
/// third of the features per split.
inline ForestParams benchmark_forest() {
  ForestParams f;
  f.num_trees = 50;
  f.mtry_fraction = 1.0 / 3.0;
  return f;
}

struct BenchmarkMethod {
  std::string label;
  LearnerConfig config;
};

struct BenchmarkOptions {
  DgpKind dgp = DgpKind::dgp1;
  std::size_t n_train = 1000;
  std::size_t n_test = 50000;
  int reps = 1;
  std::uint64_t master_seed = 0;
  int jobs = 1;  // reps run concurrently; learners inside a rep run serially
  bool timing = false;
};

struct RepRecord {
  int rep = 0;
  std::string method;
  std::uint64_t seed = 0;
  std::optional<double> welfare;
  std::string error;
  double wall_ms = 0.0;
};

struct MethodSummary {
  std::string method;
  std::size_t count = 0;
  std::size_t failures = 0;
  double mean = 0.0;
  std::optional<double> sd;  // absent for fewer than two successful reps
};

struct BenchmarkReport {
  BenchmarkOptions options;
  std::vector<RepRecord> records;  // rep-major, methods in the given order
  std::vector<MethodSummary> summaries;

  const MethodSummary& summary(const std::string& method) const {
    for (const auto& s : summaries)
      if (s.method == method) return s;
    throw Error("benchmark report has no method '" + method + "'");
  }
};

/// Learner configuration used by the benchmark for a method name. Names may
/// carry "+missq" (linear Q on [H, D, D*H]) and/or "+missps" (logistic
/// propensities on the first-stage states only).
inline BenchmarkMethod benchmark_method(const std::string& label, const std::vector<PolicyClass>& classes,
                                        const ForestParams& forest = benchmark_forest(), int folds = 5,
                                        double eta = 0.01) {
  std::string base = label;
  bool miss_q = false, miss_ps = false;
  for (;;) {
    const auto plus = base.rfind('+');
    if (plus == std::string::npos) break;
    const std::string flag = base.substr(plus + 1);
    if (flag == "missq") miss_q = true;
    else if (flag == "missps") miss_ps = true;
    else throw Error("unknown method modifier '+" + flag + "' in '" + label + "'");
    base.resize(plus);
  }
  BenchmarkMethod m;
  m.label = label;
  m.config.method = parse_method(base);
  m.config.folds = folds;
  m.config.eta = eta;
  m.config.classes = classes;
  m.config.propensity.forest = forest;
  m.config.q.forest = forest;
  if (miss_q) m.config.q.kind = RegressorSpec::Kind::linear;
  if (miss_ps) {
    m.config.propensity.kind = RegressorSpec::Kind::linear;
    m.config.propensity.first_stage_features_only = true;
  }
  return m;
}

inline BenchmarkReport run_benchmark(const std::vector<BenchmarkMethod>& methods, const BenchmarkOptions& opt) {
  if (opt.reps < 1) throw Error("benchmark: reps must be at least 1");
  if (methods.empty()) throw Error("benchmark: no methods given");
  BenchmarkReport report;
  report.options = opt;
  const std::size_t m_count = methods.size();
  report.records.resize(static_cast<std::size_t>(opt.reps) * m_count);

  parallel_for(static_cast<std::size_t>(opt.reps), opt.jobs, [&](std::size_t r) {
    const std::uint64_t rep_seed = derive_seed(opt.master_seed, {r});
    const auto train = generate({opt.dgp, opt.n_train, derive_seed(rep_seed, {label_tag("train")})});
    const auto test = generate({opt.dgp, opt.n_test, derive_seed(rep_seed, {label_tag("test")})});
    for (std::size_t m = 0; m < m_count; ++m) {
      RepRecord& rec = report.records[r * m_count + m];
      rec.rep = static_cast<int>(r);
      rec.method = methods[m].label;
      LearnerConfig cfg = methods[m].config;
      cfg.jobs = 1;
      cfg.seed = derive_seed(rep_seed, {label_tag(methods[m].label), methods[m].config.seed});
      rec.seed = cfg.seed;
      const auto start = std::chrono::steady_clock::now();
      try {
        const auto folds = make_folds(train.size(), cfg.folds, derive_seed(rep_seed, {label_tag("folds")}));
        const auto result = learn(train.data, cfg, folds);
        rec.welfare = true_welfare(test, result.dtr);
      } catch (const std::exception& e) {
        rec.error = e.what();
      }
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
  });

  for (const auto& method : methods) {
    MethodSummary s;
    s.method = method.label;
    std::vector<double> values;
    for (const auto& rec : report.records) {
      if (rec.method != method.label) continue;
      if (rec.welfare) values.push_back(*rec.welfare);
      else ++s.failures;
    }
    s.count = values.size();
    s.mean = mean(values);
    if (values.size() >= 2) s.sd = sample_sd(values);
    report.summaries.push_back(s);
  }
  return report;
}

/// One JSON object per rep and method, then one summary object per method.
inline void write_jsonl(std::ostream& out, const BenchmarkReport& report) {
  const auto& o = report.options;
  for (const auto& rec : report.records) {
    nlohmann::json j{{"type", "rep"}, {"rep", rec.rep}, {"method", rec.method}, {"seed", rec.seed}};
    j["welfare"] = rec.welfare ? nlohmann::json(*rec.welfare) : nlohmann::json(nullptr);
    if (!rec.error.empty()) j["error"] = rec.error;
    if (o.timing) j["wall_ms"] = rec.wall_ms;
    out << j.dump() << '\n';
  }
  for (const auto& s : report.summaries) {
    nlohmann::json j{{"type", "summary"},  {"method", s.method},       {"mean", s.mean},
                     {"reps", s.count},    {"failures", s.failures},   {"dgp", to_string(o.dgp)},
                     {"n_train", o.n_train}, {"n_test", o.n_test},     {"master_seed", o.master_seed}};
    j["sd"] = s.sd ? nlohmann::json(*s.sd) : nlohmann::json(nullptr);
    if (o.dgp == DgpKind::dgp1 || o.dgp == DgpKind::dgp2 || o.dgp == DgpKind::appendix_d ||
        o.dgp == DgpKind::appendix_d_modified)
      j["note"] = "stage-1 outcome fixed at 0";
    out << j.dump() << '\n';
  }
}

/// Tree depths used for simulation benchmarks: depth 1 at the first stage and
/// depth 2 afterwards.
inline std::vector<PolicyClass> benchmark_classes(std::size_t stages) {
  std::vector<PolicyClass> out(stages, PolicyClass{2, {}});
  if (!out.empty()) out[0].depth = 1;
  return out;
}

/// Fixed-width summary table.
inline void write_table(std::ostream& out, const BenchmarkReport& report) {
  const auto& o = report.options;
  char line[160];
  std::snprintf(line, sizeof line, "%s  n_train=%zu  n_test=%zu  reps=%d\n", to_string(o.dgp), o.n_train, o.n_test,
                o.reps);
  out << line;
  std::snprintf(line, sizeof line, "%-22s %10s %10s %6s %8s\n", "method", "mean", "sd", "reps", "failed");
  out << line;
  for (const auto& s : report.summaries) {
    char sd[32] = "-";
    if (s.sd) std::snprintf(sd, sizeof sd, "%.4f", *s.sd);
    std::snprintf(line, sizeof line, "%-22s %10.4f %10s %6zu %8zu\n", s.method.c_str(), s.mean, sd, s.count,
                  s.failures);
    out << line;
  }
}

}  // namespace drdtr

#endif  // DRDTR_BENCHMARK_HPP_
