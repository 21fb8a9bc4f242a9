#pragma once

// Minimal CSV table: comma separated, mandatory header, '.' decimal point,
// optional double-quoted fields, lines starting with '#' ignored.

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "geoadd/error.hpp"

namespace geoadd {

using Eigen::Index;
using Eigen::VectorXd;

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') cur += '"', ++i;
      else if (c == '"') quoted = false;
      else cur += c;
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.emplace_back(trim(cur));
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace detail

class DataTable {
 public:
  DataTable() = default;

  static DataTable parse(std::istream& in, const std::string& source = "<input>") {
    DataTable t;
    std::string line;
    bool header = false;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
      const auto view = detail::trim(line);
      if (view.empty() || view.front() == '#') continue;
      auto fields = detail::split_csv_line(view);
      if (!header) {
        for (auto& f : fields) {
          if (f.empty()) throw DataError(source + ": empty column name in header");
          for (const auto& n : t.names_)
            if (n == f) throw DataError(source + ": duplicate column name '" + f + "'");
          t.names_.push_back(f);
        }
        t.cells_.resize(t.names_.size());
        header = true;
        continue;
      }
      if (fields.size() != t.names_.size()) {
        throw DataError(source + ": line " + std::to_string(lineno) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(t.names_.size()));
      }
      for (std::size_t c = 0; c < fields.size(); ++c) t.cells_[c].push_back(std::move(fields[c]));
    }
    if (!header) throw DataError(source + ": missing header row");
    return t;
  }

  static DataTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open data file '" + path + "'");
    return parse(in, path);
  }

  static DataTable from_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  Index rows() const { return cells_.empty() ? 0 : static_cast<Index>(cells_.front().size()); }
  const std::vector<std::string>& names() const { return names_; }

  bool has(const std::string& name) const { return find(name) >= 0; }

  /// Numeric column; missing or non-numeric cells raise a DataError naming the column.
  VectorXd column(const std::string& name) const {
    const auto c = find(name);
    if (c < 0) throw DataError("column '" + name + "' not found in data");
    const auto& raw = cells_[static_cast<std::size_t>(c)];
    VectorXd v(static_cast<Index>(raw.size()));
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (!detail::parse_double(raw[i], v[static_cast<Index>(i)])) {
        const bool missing = raw[i].empty() || raw[i] == "NA" || raw[i] == "NaN" || raw[i] == "nan";
        throw DataError("column '" + name + "' row " + std::to_string(i + 1) +
                        (missing ? ": missing value" : ": non-numeric value '" + raw[i] + "'"));
      }
    }
    return v;
  }

  const std::vector<std::string>& raw_column(const std::string& name) const {
    const auto c = find(name);
    if (c < 0) throw DataError("column '" + name + "' not found in data");
    return cells_[static_cast<std::size_t>(c)];
  }

  /// Appends or replaces a numeric column (printed with round-trip precision).
  void set_column(const std::string& name, const VectorXd& values) {
    if (!names_.empty() && rows() != values.size() && !(cells_.size() == 1 && find(name) == 0)) {
      throw DataError("column '" + name + "' has " + std::to_string(values.size()) +
                      " rows, table has " + std::to_string(rows()));
    }
    std::vector<std::string> raw;
    raw.reserve(static_cast<std::size_t>(values.size()));
    char buf[32];
    for (Index i = 0; i < values.size(); ++i) {
      auto res = std::to_chars(buf, buf + sizeof buf, values[i]);
      raw.emplace_back(buf, res.ptr);
    }
    const auto c = find(name);
    if (c >= 0) {
      cells_[static_cast<std::size_t>(c)] = std::move(raw);
    } else {
      names_.push_back(name);
      cells_.push_back(std::move(raw));
    }
  }

 private:
  long find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<long>(i);
    return -1;
  }

  std::vector<std::string> names_;
  std::vector<std::vector<std::string>> cells_;
};

}  // namespace geoadd
