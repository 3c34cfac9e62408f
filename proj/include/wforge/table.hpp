#pragma once

#include <cmath>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "wforge/common.hpp"

namespace wforge {

enum class FeatureKind { numerical, categorical };

inline const char* to_string(FeatureKind k) {
  return k == FeatureKind::numerical ? "numerical" : "categorical";
}

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::numerical;
  std::string unit;
  bool integral = false;      // decoded values are rounded to integers
  bool non_negative = false;  // decoded values are clamped at 0

  bool operator==(const FeatureSpec&) const = default;
};

struct Schema {
  std::vector<FeatureSpec> features;

  std::size_t size() const { return features.size(); }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < features.size(); ++i)
      if (features[i].name == name) return i;
    return std::nullopt;
  }

  std::size_t index_of(std::string_view name) const {
    if (auto i = find(name)) return *i;
    throw SchemaError("no feature named '" + std::string(name) + "'");
  }

  bool operator==(const Schema&) const = default;
};

// A column holds numbers or labels depending on its feature kind.
struct Column {
  std::vector<double> numbers;
  std::vector<std::string> labels;

  bool operator==(const Column&) const = default;
};

// Columnar table with a fixed schema. Row order is significant and stable.
class Table {
 public:
  Table() = default;
  explicit Table(Schema schema) : schema_(std::move(schema)), columns_(schema_.size()) {}

  const Schema& schema() const { return schema_; }
  std::size_t cols() const { return columns_.size(); }

  std::size_t rows() const {
    if (columns_.empty()) return 0;
    const auto& c = columns_.front();
    return schema_.features.front().kind == FeatureKind::numerical ? c.numbers.size() : c.labels.size();
  }

  const std::vector<double>& numbers(std::size_t col) const { return checked(col, FeatureKind::numerical).numbers; }
  std::vector<double>& numbers(std::size_t col) { return checked(col, FeatureKind::numerical).numbers; }
  const std::vector<std::string>& labels(std::size_t col) const { return checked(col, FeatureKind::categorical).labels; }
  std::vector<std::string>& labels(std::size_t col) { return checked(col, FeatureKind::categorical).labels; }

  const std::vector<double>& numbers(std::string_view name) const { return numbers(schema_.index_of(name)); }
  const std::vector<std::string>& labels(std::string_view name) const { return labels(schema_.index_of(name)); }

  void reserve(std::size_t n) {
    for (std::size_t i = 0; i < columns_.size(); ++i) {
      if (schema_.features[i].kind == FeatureKind::numerical)
        columns_[i].numbers.reserve(n);
      else
        columns_[i].labels.reserve(n);
    }
  }

  // New table holding the given rows, in the given order.
  Table select(const std::vector<std::size_t>& rows) const {
    Table out(schema_);
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      if (schema_.features[c].kind == FeatureKind::numerical) {
        auto& dst = out.columns_[c].numbers;
        dst.reserve(rows.size());
        for (auto r : rows) dst.push_back(columns_[c].numbers.at(r));
      } else {
        auto& dst = out.columns_[c].labels;
        dst.reserve(rows.size());
        for (auto r : rows) dst.push_back(columns_[c].labels.at(r));
      }
    }
    return out;
  }

  // Throws SchemaError when columns have unequal lengths.
  void validate() const {
    std::size_t n = rows();
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      std::size_t len = schema_.features[c].kind == FeatureKind::numerical ? columns_[c].numbers.size()
                                                                            : columns_[c].labels.size();
      if (len != n) throw SchemaError("column '" + schema_.features[c].name + "' has ragged length");
    }
  }

  bool operator==(const Table&) const = default;

 private:
  Column& checked(std::size_t col, FeatureKind kind) {
    if (col >= columns_.size()) throw SchemaError("column index out of range");
    if (schema_.features[col].kind != kind)
      throw SchemaError("feature '" + schema_.features[col].name + "' is not " + to_string(kind));
    return columns_[col];
  }
  const Column& checked(std::size_t col, FeatureKind kind) const {
    return const_cast<Table*>(this)->checked(col, kind);
  }

  Schema schema_;
  std::vector<Column> columns_;
};

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace csv {

// Splits one CSV record (RFC 4180 quoting, no embedded newlines).
inline std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  if (quoted) throw ParseError("unterminated quote");
  out.push_back(std::move(field));
  return out;
}

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string quote(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline bool getline(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

}  // namespace csv

// Numbers print as integers for integral features, otherwise with 17
// significant digits so that parsing the text restores the exact double.
inline std::string format_number(double v, bool integral) {
  char buf[64];
  if (integral && std::abs(v) < 9.0e15)
    std::snprintf(buf, sizeof buf, "%.0f", v);
  else
    std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_number(const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ParseError("not a number: '" + text + "'");
  }
  if (used != text.size() || !std::isfinite(v)) throw ParseError("not a finite number: '" + text + "'");
  return v;
}

inline void write_csv(std::ostream& out, const Table& table) {
  const auto& feats = table.schema().features;
  for (std::size_t c = 0; c < feats.size(); ++c) out << (c ? "," : "") << csv::quote(feats[c].name);
  out << '\n';
  std::size_t n = table.rows();
  std::string line;
  for (std::size_t r = 0; r < n; ++r) {
    line.clear();
    for (std::size_t c = 0; c < feats.size(); ++c) {
      if (c) line.push_back(',');
      if (feats[c].kind == FeatureKind::numerical)
        line += format_number(table.numbers(c)[r], feats[c].integral);
      else
        line += csv::quote(table.labels(c)[r]);
    }
    line.push_back('\n');
    out << line;
  }
}

// Reads a table whose header must list exactly the schema's feature names in
// order.
inline Table read_csv(std::istream& in, const Schema& schema) {
  if (!in) throw IoError("unreadable table stream");
  Table table(schema);
  std::string line;
  if (!csv::getline(in, line)) {
    return table;
  }
  auto header = csv::split(line);
  if (header.size() != schema.size()) throw SchemaError("table header has " + std::to_string(header.size()) + " columns, expected " + std::to_string(schema.size()));
  for (std::size_t c = 0; c < header.size(); ++c)
    if (csv::trim(header[c]) != schema.features[c].name)
      throw SchemaError("table header column " + std::to_string(c) + " is '" + header[c] + "', expected '" +
                        schema.features[c].name + "'");
  std::size_t lineno = 1;
  while (csv::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = csv::split(line);
    if (fields.size() != schema.size())
      throw ParseError("line " + std::to_string(lineno) + ": expected " + std::to_string(schema.size()) + " fields");
    for (std::size_t c = 0; c < fields.size(); ++c) {
      if (schema.features[c].kind == FeatureKind::numerical)
        table.numbers(c).push_back(parse_number(csv::trim(fields[c])));
      else
        table.labels(c).push_back(fields[c]);
    }
  }
  return table;
}

}  // namespace wforge
