#pragma once

// CSV ingestion with cell-level diagnostics, predictor standardization, and
// the JSON report envelope (seed, config hash, version).

#include "ehr/robust.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

namespace ehr {

inline constexpr const char* kVersion = "0.1.0";

using Json = nlohmann::json;

namespace detail {

/// Splits one logical CSV record; handles quoted fields with "" escapes and
/// embedded newlines. Returns false at end of input.
inline bool read_csv_record(std::istream& in, std::vector<std::string>& out, long& line) {
  out.clear();
  std::string field;
  bool quoted = false, any = false, field_started = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      out.push_back(field);
      field.clear();
      field_started = false;
    } else if (c == '\n') {
      ++line;
      if (!field.empty() && field.back() == '\r') field.pop_back();
      out.push_back(field);
      return true;
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (quoted) throw InputError("csv: unterminated quoted field near line " + std::to_string(line));
  if (!any) return false;
  if (!field.empty() && field.back() == '\r') field.pop_back();
  out.push_back(field);
  return true;
}

inline bool parse_double(const std::string& s, double& v) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return false;
  const auto e = s.find_last_not_of(" \t");
  const std::string t = s.substr(b, e - b + 1);
  try {
    std::size_t pos = 0;
    v = std::stod(t, &pos);
    return pos == t.size() && std::isfinite(v);
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace detail

struct Table {
  std::vector<std::string> header;
  Matrix cells;
};

/// Reads a rectangular numeric CSV with a header row.
inline Table read_csv(std::istream& in, const std::string& source = "<stream>") {
  Table t;
  long line = 1;
  std::vector<std::string> rec;
  if (!detail::read_csv_record(in, t.header, line)) throw InputError(source + ": empty file");
  if (!t.header.empty() && t.header[0].rfind("\xEF\xBB\xBF", 0) == 0) t.header[0].erase(0, 3);
  std::unordered_set<std::string> seen;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    if (t.header[j].empty()) throw InputError(source + ": header column " + std::to_string(j + 1) + " is empty");
    if (!seen.insert(t.header[j]).second) throw InputError(source + ": duplicate header '" + t.header[j] + "'");
  }
  std::vector<std::vector<double>> rows;
  while (true) {
    const long at = line;
    if (!detail::read_csv_record(in, rec, line)) break;
    if (rec.size() == 1 && rec[0].empty()) continue;  // blank line
    if (rec.size() != t.header.size())
      throw InputError(source + ": line " + std::to_string(at) + " has " + std::to_string(rec.size()) + " fields, expected " +
                       std::to_string(t.header.size()));
    std::vector<double> row(rec.size());
    for (std::size_t j = 0; j < rec.size(); ++j) {
      if (!detail::parse_double(rec[j], row[j])) {
        const std::string what = rec[j].find_first_not_of(" \t") == std::string::npos ? "missing value" : "non-numeric value '" + rec[j] + "'";
        throw InputError(source + ": " + what + " at line " + std::to_string(at) + ", column '" + t.header[j] + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  t.cells.resize(static_cast<Index>(rows.size()), static_cast<Index>(t.header.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) t.cells(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return t;
}

struct Ingested {
  Dataset data;
  std::string response;
  std::vector<std::string> predictors;
  Vector scales;  // predictor SDs divided out (ones when not standardized)
  bool standardized = false;
};

/// Divides each predictor by its sample SD (divisor n - 1). Constant
/// columns are rejected.
inline Vector standardize_predictors(Matrix& x, const std::vector<std::string>& names = {}) {
  const Index n = x.rows();
  if (n < 2) throw InputError("standardize: need at least two rows");
  Vector s(x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    const double m = x.col(j).mean();
    s(j) = std::sqrt((x.col(j).array() - m).square().sum() / static_cast<double>(n - 1));
    if (!(s(j) > 0.0)) {
      const std::string nm = static_cast<std::size_t>(j) < names.size() ? names[static_cast<std::size_t>(j)] : std::to_string(j);
      throw InputError("standardize: predictor '" + nm + "' is constant");
    }
    x.col(j) /= s(j);
  }
  return s;
}

/// Response chosen by header name, or by 0-based index when no header matches.
inline Ingested ingest_table(const Table& t, const std::string& response, bool standardize) {
  Index col = -1;
  for (std::size_t j = 0; j < t.header.size(); ++j)
    if (t.header[j] == response) col = static_cast<Index>(j);
  if (col < 0) {
    std::size_t pos = 0;
    long idx = -1;
    try {
      idx = std::stol(response, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == response.size() && pos > 0 && idx >= 0 && idx < static_cast<long>(t.header.size())) col = idx;
  }
  if (col < 0) throw InputError("response column '" + response + "' not found");
  Ingested out;
  out.response = t.header[static_cast<std::size_t>(col)];
  const Index n = t.cells.rows(), q = t.cells.cols();
  out.data.y = t.cells.col(col);
  out.data.X.resize(n, q - 1);
  Index k = 0;
  for (Index j = 0; j < q; ++j) {
    if (j == col) continue;
    out.data.X.col(k++) = t.cells.col(j);
    out.predictors.push_back(t.header[static_cast<std::size_t>(j)]);
  }
  out.scales = Vector::Ones(q - 1);
  if (standardize) {
    out.scales = standardize_predictors(out.data.X, out.predictors);
    out.standardized = true;
  }
  return out;
}

inline Ingested ingest_csv(const std::string& path, const std::string& response, bool standardize = false) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open input file '" + path + "'");
  return ingest_table(read_csv(in, path), response, standardize);
}

/// FNV-1a over the compact dump of the configuration object.
inline std::uint64_t config_hash(const Json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

inline Json to_json(const Vector& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

inline Json to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    const Vector r = m.row(i).transpose();
    rows.push_back(to_json(r));
  }
  return rows;
}

inline Vector vector_from_json(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline Matrix matrix_from_json(const Json& j) {
  const Index r = static_cast<Index>(j.size());
  const Index c = r > 0 ? static_cast<Index>(j[0].size()) : 0;
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i) m.row(i) = vector_from_json(j[static_cast<std::size_t>(i)]).transpose();
  return m;
}

/// Wraps a command result with the reproducibility triple.
inline Json report_envelope(const std::string& command, const Json& config, std::uint64_t seed, Json result) {
  Json out;
  out["command"] = command;
  out["version"] = kVersion;
  out["seed"] = seed;
  out["config"] = config;
  out["config_hash"] = hex64(config_hash(config));
  out["result"] = std::move(result);
  return out;
}

}  // namespace ehr
