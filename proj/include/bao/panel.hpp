#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "bao/errors.hpp"

namespace bao {

inline std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline double parse_double(const std::string& cell, bool* ok) {
  if (cell.empty() || cell == "NA" || cell == "nan" || cell == "NaN") {
    *ok = true;
    return std::numeric_limits<double>::quiet_NaN();
  }
  double v = 0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  *ok = (ec == std::errc() && ptr == cell.data() + cell.size());
  return v;
}

// A full treatment sequence z_1..z_T, packed little-endian into `code`.
struct TreatmentPath {
  int T = 0;
  std::uint32_t code = 0;

  int bit(int t) const { return (code >> (t - 1)) & 1u; }  // t in 1..T
  std::uint32_t prefix(int t) const {
    return t <= 0 ? 0u : code & ((1u << t) - 1u);
  }
  int sum() const {
    int s = 0;
    for (int t = 1; t <= T; ++t) s += bit(t);
    return s;
  }
  std::string label() const {
    std::string s(static_cast<std::size_t>(T), '0');
    for (int t = 1; t <= T; ++t) s[t - 1] = bit(t) ? '1' : '0';
    return s;
  }
  bool operator==(const TreatmentPath&) const = default;
};

// Longitudinal dataset: per-time covariate blocks, binary treatments, an
// end-of-follow-up outcome, and optionally monotone censoring indicators.
// Rows are units in file order.  Immutable once validated.
struct PanelDataset {
  int n = 0;
  int T = 0;
  std::vector<std::string> ids;             // length n
  std::vector<Eigen::MatrixXd> covariates;  // T blocks, each n x P_t
  Eigen::MatrixXi treatments;               // n x T, entries {0,1} (-1 = unobserved)
  Eigen::VectorXd outcome;                  // length n, NaN when censored
  std::optional<Eigen::MatrixXi> censoring; // n x T, entries {0,1}

  int periods() const { return T; }
  int dim(int t) const { return static_cast<int>(covariates[t - 1].cols()); }

  bool censored_at(int i, int t) const {  // t in 0..T; t=0 is never censored
    if (t <= 0 || !censoring) return false;
    return (*censoring)(i, t - 1) != 0;
  }
  bool fully_observed(int i) const { return !censored_at(i, T); }

  std::uint32_t path_prefix(int i, int t) const {
    std::uint32_t code = 0;
    for (int s = 1; s <= t; ++s)
      code |= static_cast<std::uint32_t>(treatments(i, s - 1) & 1) << (s - 1);
    return code;
  }

  void validate() const {
    if (n < 1) throw ValidationError("dataset has no units");
    if (T < 1) throw ValidationError("dataset has no treatment periods");
    for (int t = 1; t <= T; ++t)
      if (dim(t) < 1)
        throw ValidationError("no covariates at t=" + std::to_string(t));
    for (int i = 0; i < n; ++i) {
      if (censoring) {
        bool seen = false;
        for (int t = 1; t <= T; ++t) {
          const int c = (*censoring)(i, t - 1);
          if (c != 0 && c != 1)
            throw ValidationError("censoring not binary, unit " + ids[i] +
                                  ", t=" + std::to_string(t));
          if (seen && c == 0)
            throw ValidationError("censoring not monotone, unit " + ids[i]);
          seen = seen || c == 1;
        }
      }
      for (int t = 1; t <= T; ++t) {
        if (censored_at(i, t)) continue;  // treatment unobserved after loss
        const int z = treatments(i, t - 1);
        if (z != 0 && z != 1)
          throw ValidationError("treatment not binary, unit " + ids[i] +
                                ", t=" + std::to_string(t));
      }
      for (int t = 1; t <= T; ++t) {
        if (censored_at(i, t - 1)) continue;
        for (int p = 0; p < dim(t); ++p)
          if (!std::isfinite(covariates[t - 1](i, p)))
            throw ValidationError("covariate missing, unit " + ids[i] + ", x" +
                                  std::to_string(t) + "_" +
                                  std::to_string(p + 1));
      }
      if (fully_observed(i) && !std::isfinite(outcome(i)))
        throw ValidationError("outcome missing, unit " + ids[i]);
    }
  }
};

// Treatment-history strata: for every prefix length t and realized prefix,
// the sorted unit indices with that observed history.  Under censoring only
// units still uncensored through t are assigned at level t, so level-T
// members are exactly the complete cases.
struct PathStrata {
  int T = 0;
  std::vector<std::map<std::uint32_t, std::vector<int>>> levels;  // 0..T

  static const std::vector<int>& empty_members() {
    static const std::vector<int> e;
    return e;
  }

  const std::vector<int>& members(int t, std::uint32_t prefix) const {
    auto it = levels[t].find(prefix);
    return it == levels[t].end() ? empty_members() : it->second;
  }
  int count(int t, std::uint32_t prefix) const {
    return static_cast<int>(members(t, prefix).size());
  }
  int complete_cases() const {
    int s = 0;
    for (const auto& [code, idx] : levels[T]) s += static_cast<int>(idx.size());
    return s;
  }
  double prevalence(std::uint32_t path_code) const {
    const int total = complete_cases();
    return total == 0 ? 0.0 : static_cast<double>(count(T, path_code)) / total;
  }
  std::vector<TreatmentPath> realized_paths() const {
    std::vector<TreatmentPath> out;
    out.reserve(levels[T].size());
    for (const auto& [code, idx] : levels[T])
      if (!idx.empty()) out.push_back({T, code});
    return out;
  }
};

inline PathStrata build_strata(const PanelDataset& data) {
  PathStrata strata;
  strata.T = data.T;
  strata.levels.resize(static_cast<std::size_t>(data.T) + 1);
  for (int i = 0; i < data.n; ++i) strata.levels[0][0].push_back(i);
  for (int t = 1; t <= data.T; ++t)
    for (int i = 0; i < data.n; ++i) {
      if (data.censored_at(i, t)) continue;
      strata.levels[t][data.path_prefix(i, t)].push_back(i);
    }
  return strata;
}

// Column mapping for delimited ingestion.  Empty vectors mean "infer from
// the canonical header names": id, z1..zT, x{t}_{p}, y, c1..cT.
struct ColumnMapping {
  std::string id = "id";
  std::string y = "y";
  std::vector<std::string> z;
  std::vector<std::vector<std::string>> x;
  std::vector<std::string> c;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  cells.push_back(cur);
  return cells;
}

inline int find_column(const std::vector<std::string>& header,
                       const std::string& name) {
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == name) return static_cast<int>(j);
  return -1;
}

}  // namespace detail

inline PanelDataset load_panel(std::istream& in, ColumnMapping schema = {}) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty input: no header row");
  const auto header = detail::split_csv_line(line);

  // Infer z/x/c lists from canonical names when the mapping leaves them open.
  if (schema.z.empty()) {
    for (int t = 1;; ++t) {
      const std::string name = "z" + std::to_string(t);
      if (detail::find_column(header, name) < 0) break;
      schema.z.push_back(name);
    }
  }
  const int T = static_cast<int>(schema.z.size());
  if (T == 0) throw ParseError("no treatment columns found (expected z1..zT)");
  if (schema.x.empty()) {
    schema.x.resize(T);
    for (int t = 1; t <= T; ++t)
      for (int p = 1;; ++p) {
        const std::string name =
            "x" + std::to_string(t) + "_" + std::to_string(p);
        if (detail::find_column(header, name) < 0) break;
        schema.x[t - 1].push_back(name);
      }
  }
  if (schema.c.empty()) {
    for (int t = 1; t <= T; ++t) {
      const std::string name = "c" + std::to_string(t);
      if (detail::find_column(header, name) < 0) {
        schema.c.clear();
        break;
      }
      schema.c.push_back(name);
    }
  }

  const int id_col = detail::find_column(header, schema.id);
  const int y_col = detail::find_column(header, schema.y);
  if (y_col < 0) throw ParseError("outcome column '" + schema.y + "' not found");
  std::vector<int> z_cols, c_cols;
  std::vector<std::vector<int>> x_cols(T);
  for (const auto& name : schema.z) {
    const int j = detail::find_column(header, name);
    if (j < 0) throw ParseError("treatment column '" + name + "' not found");
    z_cols.push_back(j);
  }
  for (int t = 1; t <= T; ++t) {
    if (schema.x[t - 1].empty())
      throw ParseError("no covariate columns for t=" + std::to_string(t));
    for (const auto& name : schema.x[t - 1]) {
      const int j = detail::find_column(header, name);
      if (j < 0) throw ParseError("covariate column '" + name + "' not found");
      x_cols[t - 1].push_back(j);
    }
  }
  for (const auto& name : schema.c) {
    const int j = detail::find_column(header, name);
    if (j < 0) throw ParseError("censoring column '" + name + "' not found");
    c_cols.push_back(j);
  }

  std::vector<std::vector<std::string>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError("row " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " cells, got " +
                       std::to_string(cells.size()));
    rows.push_back(std::move(cells));
  }
  const int n = static_cast<int>(rows.size());
  if (n == 0) throw ParseError("no data rows");

  PanelDataset data;
  data.n = n;
  data.T = T;
  data.ids.resize(n);
  data.treatments.setZero(n, T);
  data.outcome.resize(n);
  for (int t = 1; t <= T; ++t)
    data.covariates.emplace_back(
        Eigen::MatrixXd::Zero(n, static_cast<int>(x_cols[t - 1].size())));
  if (!c_cols.empty()) data.censoring = Eigen::MatrixXi::Zero(n, T);

  auto cell_value = [&](int i, int col) {
    bool ok = false;
    const double v = parse_double(rows[i][col], &ok);
    if (!ok)
      throw ParseError("row " + std::to_string(i + 2) + ": non-numeric cell '" +
                       rows[i][col] + "' in column '" + header[col] + "'");
    return v;
  };

  for (int i = 0; i < n; ++i) {
    data.ids[i] = id_col >= 0 ? rows[i][id_col] : std::to_string(i + 1);
    for (int t = 0; t < T; ++t) {
      const double z = cell_value(i, z_cols[t]);
      data.treatments(i, t) = std::isnan(z) ? -1 : static_cast<int>(z);
      if (!std::isnan(z) && z != std::floor(z))
        throw ValidationError("treatment not binary, unit " + data.ids[i] +
                              ", t=" + std::to_string(t + 1));
    }
    for (int t = 0; t < T; ++t)
      for (std::size_t p = 0; p < x_cols[t].size(); ++p)
        data.covariates[t](i, static_cast<int>(p)) =
            cell_value(i, x_cols[t][static_cast<int>(p)]);
    data.outcome(i) = cell_value(i, y_col);
    for (std::size_t t = 0; t < c_cols.size(); ++t) {
      const double c = cell_value(i, c_cols[t]);
      (*data.censoring)(i, static_cast<int>(t)) =
          std::isnan(c) ? 1 : static_cast<int>(c);
    }
  }
  data.validate();
  return data;
}

inline void save_panel(const PanelDataset& data, std::ostream& out) {
  out << "id";
  for (int t = 1; t <= data.T; ++t) out << ",z" << t;
  for (int t = 1; t <= data.T; ++t)
    for (int p = 1; p <= data.dim(t); ++p) out << ",x" << t << "_" << p;
  out << ",y";
  if (data.censoring)
    for (int t = 1; t <= data.T; ++t) out << ",c" << t;
  out << "\n";
  for (int i = 0; i < data.n; ++i) {
    out << data.ids[i];
    for (int t = 0; t < data.T; ++t) {
      if (data.treatments(i, t) < 0)
        out << ",NA";
      else
        out << "," << data.treatments(i, t);
    }
    for (int t = 0; t < data.T; ++t)
      for (int p = 0; p < data.covariates[t].cols(); ++p)
        out << "," << format_double(data.covariates[t](i, p));
    out << "," << format_double(data.outcome(i));
    if (data.censoring)
      for (int t = 0; t < data.T; ++t) out << "," << (*data.censoring)(i, t);
    out << "\n";
  }
}

// Unit-level bootstrap resample; trajectories are kept whole.
inline PanelDataset resample_units(const PanelDataset& data,
                                   const std::vector<int>& picks) {
  PanelDataset out;
  out.n = static_cast<int>(picks.size());
  out.T = data.T;
  out.ids.resize(out.n);
  out.treatments.resize(out.n, data.T);
  out.outcome.resize(out.n);
  for (int t = 0; t < data.T; ++t)
    out.covariates.emplace_back(out.n, data.covariates[t].cols());
  if (data.censoring) out.censoring = Eigen::MatrixXi(out.n, data.T);
  for (int r = 0; r < out.n; ++r) {
    const int i = picks[r];
    out.ids[r] = data.ids[i];
    out.treatments.row(r) = data.treatments.row(i);
    out.outcome(r) = data.outcome(i);
    for (int t = 0; t < data.T; ++t)
      out.covariates[t].row(r) = data.covariates[t].row(i);
    if (data.censoring) out.censoring->row(r) = data.censoring->row(i);
  }
  return out;
}

}  // namespace bao
