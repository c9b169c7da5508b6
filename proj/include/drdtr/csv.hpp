#ifndef DRDTR_CSV_HPP_
#define DRDTR_CSV_HPP_

// Panel CSV layout (header required):
//   unit_id, a1..aT, s1_1..s1_{p1}, ..., sT_1..sT_{pT}, y1..yT
// Columns are matched by name, so their order in the file is free; unknown
// columns are ignored. Cells of y_t for stages without a recorded outcome may
// be empty.

#include "drdtr/dataset.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace drdtr {

/// Shortest decimal text that parses back to exactly `x`.
inline std::string format_number(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

namespace csv_detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      return cells;
    }
    cells.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

inline std::string locate(std::size_t line, std::string_view column) {
  return "line " + std::to_string(line) + ", column '" + std::string(column) + "'";
}

inline double parse_real(std::string_view cell, std::size_t line, std::string_view column) {
  double v = 0.0;
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v))
    throw Error("csv: non-numeric value '" + std::string(cell) + "' at " + locate(line, column));
  return v;
}

}  // namespace csv_detail

/// Expected column names for `schema`, in canonical order.
inline std::vector<std::string> panel_columns(const StageSchema& schema) {
  std::vector<std::string> cols{"unit_id"};
  const std::size_t t_count = schema.num_stages();
  for (std::size_t t = 0; t < t_count; ++t) cols.push_back("a" + std::to_string(t + 1));
  for (std::size_t t = 0; t < t_count; ++t)
    for (int j = 0; j < schema.state_dims[t]; ++j)
      cols.push_back("s" + std::to_string(t + 1) + "_" + std::to_string(j + 1));
  for (std::size_t t = 0; t < t_count; ++t) cols.push_back("y" + std::to_string(t + 1));
  return cols;
}

inline PanelDataset read_csv(std::istream& in, const StageSchema& schema) {
  using namespace csv_detail;
  schema.validate();
  std::string line;
  if (!std::getline(in, line)) throw Error("csv: empty input, header row required");
  const auto header = split(line);
  std::map<std::string, std::size_t, std::less<>> index;
  for (std::size_t c = 0; c < header.size(); ++c) index.emplace(std::string(header[c]), c);

  const auto expected = panel_columns(schema);
  std::vector<std::size_t> pos;
  for (const auto& name : expected) {
    auto it = index.find(name);
    if (it == index.end()) throw Error("csv: missing column '" + name + "' in header");
    pos.push_back(it->second);
  }

  const std::size_t stages = schema.num_stages();
  std::vector<std::string> ids;
  std::vector<std::vector<int>> actions(stages);
  std::vector<std::vector<double>> state_vals(stages);
  std::vector<std::vector<double>> outcome_vals(stages);

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size())
      throw Error("csv: line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                  " cells, header has " + std::to_string(header.size()));
    std::size_t k = 0;
    ids.emplace_back(cells[pos[k++]]);
    for (std::size_t t = 0; t < stages; ++t, ++k) {
      const double v = parse_real(cells[pos[k]], line_no, expected[k]);
      const int a = std::abs(v) < 1e9 ? static_cast<int>(v) : -1;
      if (static_cast<double>(a) != v && a != -1)
        throw Error("csv: action code must be an integer at " + locate(line_no, expected[k]));
      if (a < 0 || a >= schema.actions_per_stage[t])
        throw Error("csv: action code " + std::to_string(a) + " outside [0, " +
                    std::to_string(schema.actions_per_stage[t]) + ") at " +
                    locate(line_no, expected[k]));
      actions[t].push_back(a);
    }
    for (std::size_t t = 0; t < stages; ++t)
      for (int j = 0; j < schema.state_dims[t]; ++j, ++k)
        state_vals[t].push_back(parse_real(cells[pos[k]], line_no, expected[k]));
    for (std::size_t t = 0; t < stages; ++t, ++k) {
      const auto cell = cells[pos[k]];
      if (!schema.outcome_present[t] && cell.empty()) {
        outcome_vals[t].push_back(0.0);
        continue;
      }
      outcome_vals[t].push_back(parse_real(cell, line_no, expected[k]));
    }
  }
  if (ids.empty()) throw Error("csv: no data rows");

  const auto n = static_cast<Eigen::Index>(ids.size());
  std::vector<Matrix> states(stages);
  std::vector<Vector> outcomes(stages);
  for (std::size_t t = 0; t < stages; ++t) {
    states[t] = Eigen::Map<const Matrix>(state_vals[t].data(), n, schema.state_dims[t]);
    outcomes[t] = Eigen::Map<const Vector>(outcome_vals[t].data(), n);
  }
  return PanelDataset(schema, std::move(ids), std::move(actions), std::move(states),
                      std::move(outcomes));
}

/// Parses the panel file at `path`. Errors name the offending line and column.
inline PanelDataset load_csv(const std::string& path, const StageSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error("csv: cannot open '" + path + "'");
  try {
    return read_csv(in, schema);
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

inline void write_csv(std::ostream& out, const PanelDataset& data) {
  const auto& schema = data.schema();
  const auto cols = panel_columns(schema);
  for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
  out << '\n';
  const std::size_t stages = data.num_stages();
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.unit_id(i);
    for (std::size_t t = 0; t < stages; ++t) out << ',' << data.action(t, i);
    for (std::size_t t = 0; t < stages; ++t)
      for (Eigen::Index j = 0; j < data.states(t).cols(); ++j)
        out << ',' << format_number(data.states(t)(static_cast<Eigen::Index>(i), j));
    for (std::size_t t = 0; t < stages; ++t) out << ',' << format_number(data.outcome(t, i));
    out << '\n';
  }
}

inline void write_csv(const std::string& path, const PanelDataset& data) {
  std::ofstream out(path);
  if (!out) throw Error("csv: cannot write '" + path + "'");
  write_csv(out, data);
}

}  // namespace drdtr

#endif  // DRDTR_CSV_HPP_
