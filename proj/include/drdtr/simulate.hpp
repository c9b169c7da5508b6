#ifndef DRDTR_SIMULATE_HPP_
#define DRDTR_SIMULATE_HPP_

// Two-stage simulation designs with full potential-outcome maps.
//
//  dgp1, dgp2        20 standard-normal first-stage states, one continuous
//                    second-stage state, logistic propensities, payoff only
//                    at stage 2 (Y_1 = 0).
//  appendix_d[_mod]  no states, independent fair-coin actions, Bernoulli
//                    payoff at stage 2 with fixed means per action pair.
//  custom_discrete   S_1 in {0,1,2}, binary S_2, Bernoulli outcomes at both
//                    stages; small enough for exact expectations.
//
// Each unit draws from its own stream derive_seed(seed, {unit}), so a panel
// is a prefix of any larger panel with the same seed.

#include "drdtr/csv.hpp"
#include "drdtr/dataset.hpp"
#include "drdtr/nuisance.hpp"
#include "drdtr/policy.hpp"
#include "drdtr/rng.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace drdtr {

enum class DgpKind { dgp1, dgp2, appendix_d, appendix_d_modified, custom_discrete };

inline const char* to_string(DgpKind k) {
  switch (k) {
    case DgpKind::dgp1: return "dgp1";
    case DgpKind::dgp2: return "dgp2";
    case DgpKind::appendix_d: return "appendix_d";
    case DgpKind::appendix_d_modified: return "appendix_d_modified";
    default: return "custom_discrete";
  }
}

inline DgpKind parse_dgp_kind(const std::string& s) {
  for (DgpKind k : {DgpKind::dgp1, DgpKind::dgp2, DgpKind::appendix_d, DgpKind::appendix_d_modified,
                    DgpKind::custom_discrete})
    if (s == to_string(k)) return k;
  throw Error("unknown dgp '" + s + "' (expected dgp1, dgp2, appendix_d, appendix_d_modified or custom_discrete)");
}

struct DgpSpec {
  DgpKind kind = DgpKind::dgp1;
  std::size_t n = 1000;
  std::uint64_t seed = 0;
};

inline StageSchema dgp_schema(DgpKind kind) {
  switch (kind) {
    case DgpKind::dgp1:
    case DgpKind::dgp2: return StageSchema::uniform(2, 2, {20, 1}, {false, true});
    case DgpKind::appendix_d:
    case DgpKind::appendix_d_modified: return StageSchema::uniform(2, 2, {0, 0}, {false, true});
    default: return StageSchema::uniform(2, 2, {1, 1}, {true, true});
  }
}

/// Observed panel plus every unit's potential states and outcomes.
struct PotentialOutcomePanel {
  DgpKind kind = DgpKind::dgp1;
  PanelDataset data;
  std::vector<Matrix> state2;    // [a1] n x dim(S_2): S_2(a1)
  std::vector<Vector> outcome1;  // [a1]: Y_1(a1)
  std::vector<Vector> outcome2;  // [a1 * d2 + a2]: Y_2(a1, a2)

  std::size_t size() const { return data.size(); }
};

namespace sim_detail {

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }
inline double logistic_of_neg(double index) { return 1.0 / (1.0 + std::exp(index)); }

// Appendix-D means mu[a1][a2].
inline std::array<std::array<double, 2>, 2> appendix_d_means(DgpKind kind) {
  return {{{0.6, kind == DgpKind::appendix_d_modified ? 0.4 : 0.0}, {0.5, 1.0}}};
}

// custom_discrete design.
inline constexpr std::array<double, 3> kS1Prob{0.3, 0.45, 0.25};
inline constexpr std::array<double, 3> kA1Prob{0.25, 0.5, 0.8};
inline constexpr std::array<std::array<double, 2>, 3> kY1Mean{{{0.2, 0.4}, {0.5, 0.3}, {0.1, 0.6}}};
inline constexpr std::array<std::array<double, 2>, 3> kS2Prob{{{0.3, 0.7}, {0.5, 0.4}, {0.6, 0.9}}};

inline double a2_prob(int s1, int a1, int s2) { return 0.15 + 0.25 * a1 + 0.1 * s1 + 0.2 * s2; }
inline double y2_mean(int s1, int a1, int s2, int a2) {
  return 0.2 + 0.1 * s1 + 0.3 * a2 * s2 + 0.2 * (1 - a2) * (1 - s2) + 0.1 * a1;
}

}  // namespace sim_detail

inline PotentialOutcomePanel generate(const DgpSpec& spec, int jobs = 1) {
  using namespace sim_detail;
  if (spec.n < 1) throw Error("generate: n must be at least 1");
  const StageSchema schema = dgp_schema(spec.kind);
  const std::size_t n = spec.n;
  const auto rows = static_cast<Eigen::Index>(n);
  const int dim1 = schema.state_dims[0];
  const int dim2 = schema.state_dims[1];

  std::vector<std::string> ids(n);
  std::vector<std::vector<int>> actions(2, std::vector<int>(n));
  std::vector<Matrix> states{Matrix(rows, dim1), Matrix(rows, dim2)};
  std::vector<Vector> outcomes{Vector::Zero(rows), Vector::Zero(rows)};
  PotentialOutcomePanel pop;
  pop.kind = spec.kind;
  pop.state2 = {Matrix(rows, dim2), Matrix(rows, dim2)};
  pop.outcome1 = {Vector::Zero(rows), Vector::Zero(rows)};
  pop.outcome2.assign(4, Vector::Zero(rows));

  parallel_for(n, jobs, [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    Rng rng(derive_seed(spec.seed, {i}));
    ids[i] = std::to_string(i + 1);
    int a1 = 0, a2 = 0;
    switch (spec.kind) {
      case DgpKind::dgp1:
      case DgpKind::dgp2: {
        for (int j = 0; j < dim1; ++j) states[0](r, j) = rng.normal();
        auto s1 = [&](int j) { return states[0](r, j - 1); };
        const double eps1 = rng.normal();
        const double eps2 = rng.normal();
        for (int b1 = 0; b1 < 2; ++b1) {
          const double s2 = sign(s1(1)) * b1 + s1(2) + s1(3) * s1(3) + s1(4) + eps1;
          pop.state2[static_cast<std::size_t>(b1)](r, 0) = s2;
          const double phi = spec.kind == DgpKind::dgp1 ? sign(s2 * (b1 - 0.5)) : s2 + (b1 - 0.5);
          for (int b2 = 0; b2 < 2; ++b2)
            pop.outcome2[static_cast<std::size_t>(b1 * 2 + b2)](r) =
                phi * b2 + 0.5 * s2 + s1(4) - s1(5) * s1(5) + s1(6) + eps2;
        }
        a1 = rng.bernoulli(logistic_of_neg(0.5 * s1(2) - 0.5 * s1(3) - s1(5))) ? 1 : 0;
        const double s2_obs = pop.state2[static_cast<std::size_t>(a1)](r, 0);
        a2 = rng.bernoulli(logistic_of_neg(0.5 * s1(5) + 0.5 * s2_obs - 0.2 * a1)) ? 1 : 0;
        break;
      }
      case DgpKind::appendix_d:
      case DgpKind::appendix_d_modified: {
        const auto mu = appendix_d_means(spec.kind);
        const double u = rng.uniform();
        for (int b1 = 0; b1 < 2; ++b1)
          for (int b2 = 0; b2 < 2; ++b2)
            pop.outcome2[static_cast<std::size_t>(b1 * 2 + b2)](r) =
                u < mu[static_cast<std::size_t>(b1)][static_cast<std::size_t>(b2)] ? 1.0 : 0.0;
        a1 = rng.bernoulli(0.5) ? 1 : 0;
        a2 = rng.bernoulli(0.5) ? 1 : 0;
        break;
      }
      case DgpKind::custom_discrete: {
        const double us = rng.uniform();
        const int s1 = us < kS1Prob[0] ? 0 : (us < kS1Prob[0] + kS1Prob[1] ? 1 : 2);
        states[0](r, 0) = s1;
        const double u_y1 = rng.uniform(), u_s2 = rng.uniform(), u_y2 = rng.uniform();
        const auto k = static_cast<std::size_t>(s1);
        for (int b1 = 0; b1 < 2; ++b1) {
          const auto kb = static_cast<std::size_t>(b1);
          pop.outcome1[kb](r) = u_y1 < kY1Mean[k][kb] ? 1.0 : 0.0;
          const int s2 = u_s2 < kS2Prob[k][kb] ? 1 : 0;
          pop.state2[kb](r, 0) = s2;
          for (int b2 = 0; b2 < 2; ++b2)
            pop.outcome2[kb * 2 + static_cast<std::size_t>(b2)](r) = u_y2 < y2_mean(s1, b1, s2, b2) ? 1.0 : 0.0;
        }
        a1 = rng.bernoulli(kA1Prob[k]) ? 1 : 0;
        a2 = rng.bernoulli(a2_prob(s1, a1, static_cast<int>(pop.state2[static_cast<std::size_t>(a1)](r, 0)))) ? 1 : 0;
        break;
      }
    }
    actions[0][i] = a1;
    actions[1][i] = a2;
    states[1].row(r) = pop.state2[static_cast<std::size_t>(a1)].row(r);
    outcomes[0](r) = pop.outcome1[static_cast<std::size_t>(a1)](r);
    outcomes[1](r) = pop.outcome2[static_cast<std::size_t>(a1 * 2 + a2)](r);
  });
  pop.data = PanelDataset(schema, std::move(ids), std::move(actions), std::move(states), std::move(outcomes));
  return pop;
}

/// Mean over units of the total outcome along each unit's counterfactual
/// path under `dtr`.
inline double true_welfare(const PotentialOutcomePanel& pop, const Dtr& dtr, int jobs = 1) {
  if (pop.outcome2.size() != 4 || pop.state2.size() != 2 || pop.outcome1.size() != 2)
    throw Error("true_welfare: panel lacks potential outcomes");
  if (dtr.num_stages() != 2) throw Error("true_welfare: the DTR must have 2 stages");
  const std::size_t n = pop.size();
  const Matrix& s1 = pop.data.states(0);
  constexpr std::size_t kChunk = 4096;
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<double> partial(chunks, 0.0);
  parallel_for(chunks, jobs, [&](std::size_t c) {
    std::vector<double> h2;
    double sum = 0.0;
    for (std::size_t i = c * kChunk; i < std::min(n, (c + 1) * kChunk); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const auto h1 = row_span(s1, r);
      const int a1 = dtr.action(0, h1);
      const Matrix& s2 = pop.state2[static_cast<std::size_t>(a1)];
      h2.assign(1, static_cast<double>(a1));
      h2.insert(h2.end(), h1.begin(), h1.end());
      for (Eigen::Index j = 0; j < s2.cols(); ++j) h2.push_back(s2(r, j));
      const int a2 = dtr.action(1, h2);
      sum += pop.outcome1[static_cast<std::size_t>(a1)](r) + pop.outcome2[static_cast<std::size_t>(a1 * 2 + a2)](r);
    }
    partial[c] = sum;
  });
  double total = 0.0;
  for (double p : partial) total += p;
  return total / static_cast<double>(n);
}

/// Sample mean of the potential outcome Y_2(a1, a2) and its standard error.
inline std::pair<double, double> potential_outcome_mean(const PotentialOutcomePanel& pop, int a1, int a2) {
  const Vector& y = pop.outcome2.at(static_cast<std::size_t>(a1 * 2 + a2));
  std::span<const double> v(y.data(), static_cast<std::size_t>(y.size()));
  return {mean(v), sample_sd(v) / std::sqrt(static_cast<double>(v.size()))};
}

/// True nuisances of the discrete designs. Q at stage 1 integrates the
/// stage-2 payoff under the supplied stage-2 policy.
inline NuisanceOracle oracle_nuisances(DgpKind kind) {
  using namespace sim_detail;
  NuisanceOracle o;
  switch (kind) {
    case DgpKind::appendix_d:
    case DgpKind::appendix_d_modified: {
      const auto mu = appendix_d_means(kind);
      o.propensity = [](std::size_t, std::span<const double>, int) { return 0.5; };
      o.q = [mu](std::size_t stage, std::span<const double> h, int a, const Dtr& policy) {
        if (stage == 1) return mu[static_cast<std::size_t>(h[0])][static_cast<std::size_t>(a)];
        const std::vector<double> h2{static_cast<double>(a)};
        return mu[static_cast<std::size_t>(a)][static_cast<std::size_t>(policy.action(1, h2))];
      };
      return o;
    }
    case DgpKind::custom_discrete: {
      o.propensity = [](std::size_t stage, std::span<const double> h, int a) {
        const double p1 = stage == 0 ? kA1Prob[static_cast<std::size_t>(h[0])]
                                     : a2_prob(static_cast<int>(h[1]), static_cast<int>(h[0]), static_cast<int>(h[2]));
        return a == 1 ? p1 : 1.0 - p1;
      };
      o.q = [](std::size_t stage, std::span<const double> h, int a, const Dtr& policy) {
        if (stage == 1) return y2_mean(static_cast<int>(h[1]), static_cast<int>(h[0]), static_cast<int>(h[2]), a);
        const int s1 = static_cast<int>(h[0]);
        const auto k = static_cast<std::size_t>(s1);
        double q = kY1Mean[k][static_cast<std::size_t>(a)];
        for (int s2 = 0; s2 < 2; ++s2) {
          const double p = s2 == 1 ? kS2Prob[k][static_cast<std::size_t>(a)] : 1.0 - kS2Prob[k][static_cast<std::size_t>(a)];
          const std::vector<double> h2{static_cast<double>(a), static_cast<double>(s1), static_cast<double>(s2)};
          q += p * y2_mean(s1, a, s2, policy.action(1, h2));
        }
        return q;
      };
      return o;
    }
    default: throw Error(std::string("no closed-form nuisances for ") + to_string(kind));
  }
}

/// Exact welfare of `dtr` on a discrete design, by enumerating S_1.
inline double exact_welfare(DgpKind kind, const Dtr& dtr) {
  const NuisanceOracle o = oracle_nuisances(kind);
  if (kind == DgpKind::custom_discrete) {
    double w = 0.0;
    for (int s1 = 0; s1 < 3; ++s1) {
      const std::vector<double> h1{static_cast<double>(s1)};
      w += sim_detail::kS1Prob[static_cast<std::size_t>(s1)] * o.q(0, h1, dtr.action(0, h1), dtr);
    }
    return w;
  }
  const std::vector<double> h1;
  return o.q(0, h1, dtr.action(0, h1), dtr);
}

/// Potential-outcome sidecar columns: unit_id, y1_a{a1}, s2_{j}_a{a1},
/// y2_a{a1}{a2}.
inline std::vector<std::string> sidecar_columns(const StageSchema& schema) {
  std::vector<std::string> cols{"unit_id", "y1_a0", "y1_a1"};
  for (int a1 = 0; a1 < 2; ++a1)
    for (int j = 1; j <= schema.state_dims[1]; ++j)
      cols.push_back("s2_" + std::to_string(j) + "_a" + std::to_string(a1));
  for (int a1 = 0; a1 < 2; ++a1)
    for (int a2 = 0; a2 < 2; ++a2) cols.push_back("y2_a" + std::to_string(a1) + std::to_string(a2));
  return cols;
}

inline void write_sidecar(std::ostream& out, const PotentialOutcomePanel& pop) {
  const auto cols = sidecar_columns(pop.data.schema());
  for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
  out << '\n';
  for (std::size_t i = 0; i < pop.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << pop.data.unit_id(i) << ',' << format_number(pop.outcome1[0](r)) << ',' << format_number(pop.outcome1[1](r));
    for (const Matrix& s2 : pop.state2)
      for (Eigen::Index j = 0; j < s2.cols(); ++j) out << ',' << format_number(s2(r, j));
    for (const Vector& y : pop.outcome2) out << ',' << format_number(y(r));
    out << '\n';
  }
}

inline void write_sidecar(const std::string& path, const PotentialOutcomePanel& pop) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  write_sidecar(out, pop);
}

/// Rebuilds a potential-outcome panel from observed data and its sidecar.
/// Rows must list the same unit ids in the same order.
inline PotentialOutcomePanel read_sidecar(std::istream& in, PanelDataset data, const std::string& origin = "sidecar") {
  const auto& schema = data.schema();
  if (schema.num_stages() != 2 || schema.actions_per_stage[0] != 2 || schema.actions_per_stage[1] != 2)
    throw Error(origin + ": potential outcomes are supported for two binary stages only");
  const auto expected = sidecar_columns(schema);
  std::string line;
  if (!std::getline(in, line)) throw Error(origin + ": empty file");
  const auto header = csv_detail::split(line);
  if (header.size() != expected.size() || !std::equal(header.begin(), header.end(), expected.begin()))
    throw Error(origin + ": header does not match the dataset schema");
  const auto n = static_cast<Eigen::Index>(data.size());
  const int dim2 = schema.state_dims[1];
  PotentialOutcomePanel pop;
  pop.state2.assign(2, Matrix(n, dim2));
  pop.outcome1.assign(2, Vector(n));
  pop.outcome2.assign(4, Vector(n));
  std::size_t line_no = 1;
  Eigen::Index r = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv_detail::trim(line).empty()) continue;
    const auto cells = csv_detail::split(line);
    if (cells.size() != expected.size())
      throw Error(origin + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) + " cells");
    if (r >= n) throw Error(origin + ": more rows than the dataset");
    if (cells[0] != data.unit_id(static_cast<std::size_t>(r)))
      throw Error(origin + ": line " + std::to_string(line_no) + " unit '" + std::string(cells[0]) +
                  "' does not match the dataset");
    std::size_t c = 1;
    auto value = [&] {
      const double v = csv_detail::parse_real(cells[c], line_no, expected[c]);
      ++c;
      return v;
    };
    for (auto& y : pop.outcome1) y(r) = value();
    for (auto& s2 : pop.state2)
      for (int j = 0; j < dim2; ++j) s2(r, j) = value();
    for (auto& y : pop.outcome2) y(r) = value();
    ++r;
  }
  if (r != n) throw Error(origin + ": fewer rows than the dataset");
  pop.data = std::move(data);
  return pop;
}

inline PotentialOutcomePanel load_sidecar(const std::string& path, PanelDataset data) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open sidecar '" + path + "'");
  return read_sidecar(in, std::move(data), path);
}

}  // namespace drdtr

#endif  // DRDTR_SIMULATE_HPP_
