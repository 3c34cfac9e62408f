#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "wforge/common.hpp"
#include "wforge/table.hpp"

namespace wforge {

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

struct RawJobRecord {
  std::int64_t creation_time = 0;  // seconds since epoch
  std::string computing_site;
  std::string dataset_name;
  std::int64_t n_input_files = 0;
  std::int64_t input_file_bytes = 0;
  std::string job_status;
  std::int64_t n_cores = 1;
  double cpu_time = 0.0;  // seconds

  bool operator==(const RawJobRecord&) const = default;
};

struct JobRecord {
  std::int64_t creationtime = 0;
  std::string computingsite;
  std::string project;
  std::string prodstep;
  std::string datatype;
  std::string jobstatus;
  std::int64_t nfiles = 0;
  std::int64_t size = 0;
  double workload = 0.0;  // Gflop

  bool operator==(const JobRecord&) const = default;
};

// Canonical nine-feature job schema, in file column order.
inline const Schema& job_schema() {
  static const Schema schema{{
      {"creationtime", FeatureKind::numerical, "s", true, true},
      {"computingsite", FeatureKind::categorical, "", false, false},
      {"project", FeatureKind::categorical, "", false, false},
      {"prodstep", FeatureKind::categorical, "", false, false},
      {"datatype", FeatureKind::categorical, "", false, false},
      {"jobstatus", FeatureKind::categorical, "", false, false},
      {"nfiles", FeatureKind::numerical, "files", true, true},
      {"size", FeatureKind::numerical, "bytes", true, true},
      {"workload", FeatureKind::numerical, "Gflop", false, true},
  }};
  return schema;
}

inline Table make_job_table(const std::vector<JobRecord>& records) {
  Table t(job_schema());
  t.reserve(records.size());
  for (const auto& r : records) {
    t.numbers(0).push_back(static_cast<double>(r.creationtime));
    t.labels(1).push_back(r.computingsite);
    t.labels(2).push_back(r.project);
    t.labels(3).push_back(r.prodstep);
    t.labels(4).push_back(r.datatype);
    t.labels(5).push_back(r.jobstatus);
    t.numbers(6).push_back(static_cast<double>(r.nfiles));
    t.numbers(7).push_back(static_cast<double>(r.size));
    t.numbers(8).push_back(r.workload);
  }
  return t;
}

inline JobRecord job_record_at(const Table& t, std::size_t row) {
  if (!(t.schema() == job_schema())) throw SchemaError("table does not use the job schema");
  JobRecord r;
  r.creationtime = static_cast<std::int64_t>(std::llround(t.numbers(0).at(row)));
  r.computingsite = t.labels(1).at(row);
  r.project = t.labels(2).at(row);
  r.prodstep = t.labels(3).at(row);
  r.datatype = t.labels(4).at(row);
  r.jobstatus = t.labels(5).at(row);
  r.nfiles = static_cast<std::int64_t>(std::llround(t.numbers(6).at(row)));
  r.size = static_cast<std::int64_t>(std::llround(t.numbers(7).at(row)));
  r.workload = t.numbers(8).at(row);
  return r;
}

inline Table read_job_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_csv(in, job_schema());
}

inline void write_table_file(const std::string& path, const Table& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  write_csv(out, table);
  if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Parsing raw traces
// ---------------------------------------------------------------------------

namespace detail {

inline bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

inline std::int64_t parse_int(std::string_view s, std::size_t& pos, std::size_t len) {
  if (pos + len > s.size() || !all_digits(s.substr(pos, len))) throw ParseError("bad timestamp");
  std::int64_t v = std::stoll(std::string(s.substr(pos, len)));
  pos += len;
  return v;
}

inline void expect(std::string_view s, std::size_t& pos, char c) {
  if (pos >= s.size() || s[pos] != c) throw ParseError("bad timestamp");
  ++pos;
}

inline std::int64_t parse_integer_field(const std::string& text) {
  std::string t = csv::trim(text);
  std::string_view body = t;
  if (!body.empty() && (body[0] == '-' || body[0] == '+')) body.remove_prefix(1);
  if (!all_digits(body)) throw ParseError("not an integer: '" + text + "'");
  return std::stoll(t);
}

}  // namespace detail

// Integer epoch seconds or ISO-8601 `YYYY-MM-DD[T ]HH:MM:SS[.fff][Z|+HH:MM]`.
// Fractional seconds are truncated.
inline std::int64_t parse_timestamp(std::string_view text) {
  std::string t = csv::trim(text);
  std::string_view s = t;
  if (detail::all_digits(s) || (s.size() > 1 && s[0] == '-' && detail::all_digits(s.substr(1))))
    return std::stoll(t);
  using namespace std::chrono;
  std::size_t pos = 0;
  auto y = detail::parse_int(s, pos, 4);
  detail::expect(s, pos, '-');
  auto mo = detail::parse_int(s, pos, 2);
  detail::expect(s, pos, '-');
  auto d = detail::parse_int(s, pos, 2);
  year_month_day ymd{year(static_cast<int>(y)), month(static_cast<unsigned>(mo)), day(static_cast<unsigned>(d))};
  if (!ymd.ok()) throw ParseError("bad calendar date '" + t + "'");
  std::int64_t secs = 0;
  if (pos < s.size()) {
    if (s[pos] != 'T' && s[pos] != ' ') throw ParseError("bad timestamp '" + t + "'");
    ++pos;
    auto hh = detail::parse_int(s, pos, 2);
    detail::expect(s, pos, ':');
    auto mm = detail::parse_int(s, pos, 2);
    detail::expect(s, pos, ':');
    auto ss = detail::parse_int(s, pos, 2);
    if (hh > 23 || mm > 59 || ss > 60) throw ParseError("bad time of day '" + t + "'");
    secs = hh * 3600 + mm * 60 + ss;
    if (pos < s.size() && s[pos] == '.') {
      ++pos;
      std::size_t start = pos;
      while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
      if (pos == start) throw ParseError("bad fractional seconds '" + t + "'");
    }
    if (pos < s.size()) {
      if (s[pos] == 'Z') {
        ++pos;
      } else if (s[pos] == '+' || s[pos] == '-') {
        int sign = s[pos] == '+' ? 1 : -1;
        ++pos;
        auto oh = detail::parse_int(s, pos, 2);
        detail::expect(s, pos, ':');
        auto om = detail::parse_int(s, pos, 2);
        secs -= sign * (oh * 3600 + om * 60);
      }
    }
    if (pos != s.size()) throw ParseError("trailing characters in timestamp '" + t + "'");
  }
  std::int64_t days = sys_days(ymd).time_since_epoch().count();
  return days * 86400 + secs;
}

enum class TraceFormat { csv, jsonl };

struct ParseReport {
  std::vector<RawJobRecord> records;
  std::size_t malformed = 0;
  std::vector<std::string> malformed_samples;  // first few diagnostics
};

inline constexpr std::array<const char*, 8> kTraceColumns = {
    "creationtime", "computingsite", "dataset_name", "ninputdatafiles",
    "inputfilebytes", "jobstatus", "ncores", "cputime"};

namespace detail {

// Field texts in kTraceColumns order -> record, or ParseError.
inline RawJobRecord record_from_fields(const std::array<std::string, 8>& f) {
  RawJobRecord r;
  r.creation_time = parse_timestamp(f[0]);
  r.computing_site = csv::trim(f[1]);
  r.dataset_name = csv::trim(f[2]);
  r.n_input_files = parse_integer_field(f[3]);
  r.input_file_bytes = parse_integer_field(f[4]);
  r.job_status = csv::trim(f[5]);
  r.n_cores = parse_integer_field(f[6]);
  r.cpu_time = parse_number(csv::trim(f[7]));
  if (r.computing_site.empty()) throw ParseError("empty computingsite");
  if (r.n_input_files < 0) throw ParseError("negative ninputdatafiles");
  if (r.input_file_bytes < 0) throw ParseError("negative inputfilebytes");
  if (r.n_cores < 1) throw ParseError("ncores must be >= 1");
  if (!(r.cpu_time >= 0.0)) throw ParseError("negative cputime");
  return r;
}

inline std::string json_field_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number()) return format_number(v.get<double>(), false);
  throw ParseError("unsupported JSON value " + v.dump());
}

}  // namespace detail

// Parses a job trace. Malformed rows are excluded and counted; more than
// `max_malformed_fraction` of all rows being malformed aborts with DataError.
inline ParseReport parse_records(std::istream& in, TraceFormat format, double max_malformed_fraction = 0.01) {
  if (!in) throw IoError("unreadable trace source");
  ParseReport report;
  auto note = [&](std::size_t lineno, const std::string& why) {
    ++report.malformed;
    if (report.malformed_samples.size() < 10)
      report.malformed_samples.push_back("line " + std::to_string(lineno) + ": " + why);
  };
  std::string line;
  std::size_t lineno = 0;
  std::array<std::string, 8> fields;

  if (format == TraceFormat::csv) {
    if (!csv::getline(in, line)) return report;
    ++lineno;
    auto header = csv::split(line);
    std::array<std::size_t, 8> index{};
    for (std::size_t k = 0; k < kTraceColumns.size(); ++k) {
      auto it = std::find_if(header.begin(), header.end(),
                             [&](const std::string& h) { return csv::trim(h) == kTraceColumns[k]; });
      if (it == header.end()) throw SchemaError(std::string("trace is missing required column '") + kTraceColumns[k] + "'");
      index[k] = static_cast<std::size_t>(it - header.begin());
    }
    while (csv::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        auto cells = csv::split(line);
        if (cells.size() != header.size()) throw ParseError("expected " + std::to_string(header.size()) + " fields");
        for (std::size_t k = 0; k < 8; ++k) fields[k] = cells[index[k]];
        report.records.push_back(detail::record_from_fields(fields));
      } catch (const ParseError& e) {
        note(lineno, e.what());
      } catch (const std::out_of_range&) {
        note(lineno, "integer out of range");
      }
    }
  } else {
    while (std::getline(in, line)) {
      ++lineno;
      if (csv::trim(line).empty()) continue;
      nlohmann::json obj;
      try {
        obj = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error&) {
        note(lineno, "invalid JSON");
        continue;
      }
      if (!obj.is_object()) {
        note(lineno, "not a JSON object");
        continue;
      }
      for (const char* key : kTraceColumns)
        if (!obj.contains(key)) throw SchemaError(std::string("trace record is missing required key '") + key + "'");
      try {
        for (std::size_t k = 0; k < 8; ++k) fields[k] = detail::json_field_text(obj[kTraceColumns[k]]);
        report.records.push_back(detail::record_from_fields(fields));
      } catch (const ParseError& e) {
        note(lineno, e.what());
      } catch (const std::out_of_range&) {
        note(lineno, "integer out of range");
      }
    }
  }
  if (in.bad()) throw IoError("read error in trace source");
  std::size_t total = report.records.size() + report.malformed;
  if (total > 0 && static_cast<double>(report.malformed) > max_malformed_fraction * static_cast<double>(total)) {
    std::string msg = std::to_string(report.malformed) + " of " + std::to_string(total) +
                      " trace rows are malformed (limit " + format_number(max_malformed_fraction * 100.0, false) + "%)";
    if (!report.malformed_samples.empty()) msg += "; first: " + report.malformed_samples.front();
    throw DataError(msg);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Site catalog
// ---------------------------------------------------------------------------

// Per-core processing rate per computing site, in Gflop per core-second after
// multiplying by the catalog-wide scale.
class SiteCatalog {
 public:
  SiteCatalog() = default;
  explicit SiteCatalog(std::map<std::string, double> rates, double scale = 1.0) : rates_(std::move(rates)), scale_(scale) {
    if (!(scale_ > 0.0) || !std::isfinite(scale_)) throw DataError("site catalog scale must be positive");
    for (const auto& [site, rate] : rates_)
      if (!(rate > 0.0) || !std::isfinite(rate)) throw DataError("site '" + site + "' has non-positive rate");
  }

  static SiteCatalog from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("site catalog must be a JSON object");
    std::map<std::string, double> rates;
    double scale = 1.0;
    for (const auto& [key, value] : j.items()) {
      if (!value.is_number()) throw ParseError("site catalog entry '" + key + "' is not a number");
      if (key == "scale")
        scale = value.get<double>();
      else
        rates[key] = value.get<double>();
    }
    return SiteCatalog(std::move(rates), scale);
  }

  static SiteCatalog load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open site catalog '" + path + "'");
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("site catalog '" + path + "': " + e.what());
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [site, rate] : rates_) j[site] = rate;
    j["scale"] = scale_;
    return j;
  }

  double rate(const std::string& site) const {
    auto it = rates_.find(site);
    if (it == rates_.end()) throw LookupError("computing site '" + site + "' is not in the site catalog");
    return it->second * scale_;
  }

  bool contains(const std::string& site) const { return rates_.count(site) != 0; }
  double scale() const { return scale_; }
  const std::map<std::string, double>& rates() const { return rates_; }

 private:
  std::map<std::string, double> rates_;
  double scale_ = 1.0;
};

// ---------------------------------------------------------------------------
// Dataset names, filtering, workload
// ---------------------------------------------------------------------------

struct DaodName {
  std::string project;
  std::string prodstep;
  std::string datatype;

  bool operator==(const DaodName&) const = default;
};

// Dataset names are dot-separated; project, production step and data type sit
// at fields 0, 3 and 4.
inline DaodName parse_daod_name(std::string_view name) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    auto dot = name.find('.', start);
    parts.push_back(name.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  if (parts.size() < 5) throw ParseError("dataset name '" + std::string(name) + "' has fewer than 5 dot-separated fields");
  DaodName out{std::string(parts[0]), std::string(parts[3]), std::string(parts[4])};
  if (out.project.empty() || out.prodstep.empty() || out.datatype.empty())
    throw ParseError("dataset name '" + std::string(name) + "' has an empty project/prodstep/datatype field");
  return out;
}

inline bool is_daod_datatype(std::string_view datatype) { return datatype.rfind("DAOD", 0) == 0; }

struct FilterReport {
  std::size_t input = 0;
  std::size_t unparseable = 0;
  std::size_t non_daod = 0;
  std::size_t output = 0;
};

struct FilterResult {
  std::vector<RawJobRecord> records;
  FilterReport report;
};

inline FilterResult filter_daod(const std::vector<RawJobRecord>& records) {
  FilterResult out;
  out.report.input = records.size();
  for (const auto& r : records) {
    std::optional<DaodName> parsed;
    try {
      parsed = parse_daod_name(r.dataset_name);
    } catch (const ParseError&) {
      ++out.report.unparseable;
      continue;
    }
    if (!is_daod_datatype(parsed->datatype)) {
      ++out.report.non_daod;
      continue;
    }
    out.records.push_back(r);
  }
  out.report.output = out.records.size();
  return out;
}

// cores x per-core rate x cpu seconds, in Gflop.
inline double derive_workload(const RawJobRecord& r, const SiteCatalog& catalog) {
  return static_cast<double>(r.n_cores) * catalog.rate(r.computing_site) * r.cpu_time;
}

inline JobRecord to_job_record(const RawJobRecord& r, const SiteCatalog& catalog) {
  auto name = parse_daod_name(r.dataset_name);
  JobRecord j;
  j.creationtime = r.creation_time;
  j.computingsite = r.computing_site;
  j.project = name.project;
  j.prodstep = name.prodstep;
  j.datatype = name.datatype;
  j.jobstatus = r.job_status;
  j.nfiles = r.n_input_files;
  j.size = r.input_file_bytes;
  j.workload = derive_workload(r, catalog);
  return j;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

// Seeded random partition; both halves keep the input's relative row order.
inline std::pair<Table, Table> split_train_test(const Table& table, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw DataError("train fraction must lie in (0, 1)");
  std::size_t n = table.rows();
  if (n == 0) throw DataError("cannot split an empty table");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = substream(seed, 0x5011);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[uniform_index(rng, i + 1)]);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  std::vector<std::size_t> train(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {table.select(train), table.select(test)};
}

// ---------------------------------------------------------------------------
// Whole ingest pass
// ---------------------------------------------------------------------------

struct FunnelStage {
  std::string name;
  std::size_t count = 0;
};

struct IngestResult {
  Table table;
  std::vector<FunnelStage> funnel;
  std::size_t malformed = 0;
};

// parse -> DAOD filter -> name decomposition -> workload. Unknown sites throw
// LookupError naming the site.
inline IngestResult ingest_trace(std::istream& in, TraceFormat format, const SiteCatalog& catalog,
                                 double max_malformed_fraction = 0.01) {
  auto parsed = parse_records(in, format, max_malformed_fraction);
  auto filtered = filter_daod(parsed.records);
  std::vector<JobRecord> jobs;
  jobs.reserve(filtered.records.size());
  for (const auto& r : filtered.records) jobs.push_back(to_job_record(r, catalog));
  IngestResult out;
  out.malformed = parsed.malformed;
  out.funnel = {{"rows_read", parsed.records.size() + parsed.malformed},
                {"well_formed", parsed.records.size()},
                {"parseable_name", filtered.report.input - filtered.report.unparseable},
                {"daod", filtered.report.output},
                {"with_workload", jobs.size()}};
  out.table = make_job_table(jobs);
  return out;
}

}  // namespace wforge
