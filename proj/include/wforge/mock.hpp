#pragma once

// Seeded stand-in for a private job trace. The joint structure is fixed and
// documented so that downstream metrics have known targets:
//
//   site      ~ Cat(site_weights)
//   project   ~ Cat(project_weights)
//   prodstep  | project  ~ Cat(prodstep_given_project[project])
//   datatype  | project  ~ Cat(datatype_given_project[project])
//   nfiles    | datatype = 1 + Geometric(1 / (1 + extra_files[datatype]))
//   size      | nfiles, datatype = round(nfiles * exp(log_file_bytes[datatype] + size_sigma * Z1))
//   ln(workload) = site_offset[site] + datatype_offset[datatype]
//                  + files_exponent * ln(nfiles) + noise_sigma * Z2
//   jobstatus | site ~ Cat(status_given_site[site])
//   creationtime = start + 86400 * day + second,  day ~ Cat(day_weights),
//                  second ~ Uniform{0..86399}
//
// so the best achievable squared error for predicting ln(workload) from the
// other features is noise_sigma^2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "wforge/common.hpp"
#include "wforge/ingest.hpp"
#include "wforge/stats.hpp"
#include "wforge/table.hpp"

namespace wforge {

struct MockProfile {
  std::vector<std::string> sites;
  std::vector<double> site_weights;
  std::vector<double> site_rates;    // Gflop per core-second, exported as the site catalog
  std::vector<double> site_offsets;  // additive ln(workload) term

  std::vector<std::string> projects;
  std::vector<double> project_weights;

  std::vector<std::string> prodsteps;
  std::vector<std::vector<double>> prodstep_given_project;

  std::vector<std::string> datatypes;
  std::vector<std::vector<double>> datatype_given_project;
  std::vector<double> extra_files;     // mean of nfiles - 1
  std::vector<double> log_file_bytes;  // mean ln(bytes per file)
  std::vector<double> datatype_offsets;

  std::vector<std::string> statuses;
  std::vector<std::vector<double>> status_given_site;

  double size_sigma = 0.5;
  double files_exponent = 0.8;
  double noise_sigma = 0.3;

  std::int64_t start_epoch = 1700000000;
  std::vector<double> day_weights;

  static MockProfile defaults();

  // Analytic marginal distribution of a categorical feature, aligned with the
  // label list returned by `labels`.
  const std::vector<std::string>& labels(const std::string& feature) const;
  std::vector<double> category_probabilities(const std::string& feature) const;
  // Analytic marginal CDF of a numerical feature (rounding to integers is
  // ignored for size and the within-day second).
  double numeric_cdf(const std::string& feature, double x) const;

 private:
  std::vector<double> datatype_marginal() const;
  std::vector<double> nfiles_pmf(std::size_t datatype, std::size_t max_files) const;
  std::size_t files_horizon(std::size_t datatype) const;
};

namespace detail {

inline std::vector<double> normalized(std::vector<double> w) {
  double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) x /= s;
  return w;
}

}  // namespace detail

inline MockProfile MockProfile::defaults() {
  MockProfile p;
  p.sites = {"BNL",       "CERN-PROD",  "MWT2",       "AGLT2",     "SWT2_CPB",   "NET2",          "TRIUMF",
             "IN2P3-CC",  "FZK-LCG2",   "INFN-T1",    "RAL-LCG2",  "NDGF-T1",    "pic",           "SARA-MATRIX",
             "TOKYO-LCG2", "DESY-HH",   "LRZ-LMU",    "UKI-NORTHGRID-MAN-HEP", "IFIC-LCG2", "praguelcg2"};
  const std::size_t ns = p.sites.size();
  for (std::size_t i = 0; i < ns; ++i) {
    p.site_weights.push_back(1.0 / std::pow(static_cast<double>(i) + 1.0, 0.9));
    p.site_rates.push_back(9.0 + static_cast<double>((i * 7) % 11));
    p.site_offsets.push_back(std::log(p.site_rates.back()) + 0.35 * static_cast<double>((i * 5) % 4));
    double fail = 0.04 + 0.02 * static_cast<double>((i * 3) % 7);
    double cancel = 0.01 + 0.01 * static_cast<double>(i % 3);
    double closed = 0.02 + 0.01 * static_cast<double>((i * 2) % 5);
    p.status_given_site.push_back({1.0 - fail - cancel - closed, fail, cancel, closed});
  }
  p.site_weights = detail::normalized(p.site_weights);
  p.statuses = {"finished", "failed", "cancelled", "closed"};

  p.projects = {"data15_13TeV", "data16_13TeV", "data17_13TeV", "data18_13TeV", "data22_13p6TeV",
                "data23_13p6TeV", "mc20_13TeV", "mc21_13p6TeV", "mc23_13p6TeV", "valid1"};
  p.project_weights = detail::normalized({0.06, 0.09, 0.11, 0.13, 0.08, 0.10, 0.22, 0.07, 0.12, 0.02});

  p.prodsteps = {"deriv", "merge", "recon"};
  p.datatypes = {"DAOD_PHYS", "DAOD_PHYSLITE", "DAOD_LLP1", "DAOD_JETM1",
                 "DAOD_EGAM1", "DAOD_MUON1", "DAOD_FTAG1", "DAOD_TOPQ1"};
  for (std::size_t j = 0; j < p.projects.size(); ++j) {
    bool mc = p.projects[j].rfind("mc", 0) == 0;
    double merge = 0.05 + 0.03 * static_cast<double>(j % 4);
    double recon = mc ? 0.02 : 0.08;
    p.prodstep_given_project.push_back({1.0 - merge - recon, merge, recon});
    std::vector<double> dt(p.datatypes.size());
    for (std::size_t d = 0; d < dt.size(); ++d) dt[d] = 1.0 + static_cast<double>((d * 3 + j * 5) % 7);
    dt[0] += mc ? 6.0 : 9.0;  // PHYS dominates
    dt[1] += mc ? 5.0 : 2.0;
    p.datatype_given_project.push_back(detail::normalized(dt));
  }
  p.extra_files = {9.0, 3.0, 24.0, 6.0, 12.0, 4.0, 16.0, 2.0};
  p.log_file_bytes = {std::log(2.5e9), std::log(4.0e8), std::log(5.0e9), std::log(1.5e9),
                      std::log(1.2e9), std::log(9.0e8), std::log(2.0e9), std::log(6.0e8)};
  p.datatype_offsets = {8.0, 6.0, 10.5, 9.0, 7.0, 6.5, 11.5, 5.5};

  const int days = 150;
  for (int d = 0; d < days; ++d) {
    double w = 1.0 + 0.45 * std::sin(2.0 * M_PI * d / 37.0) + 0.25 * std::cos(2.0 * M_PI * d / 11.0);
    if (d % 7 == 4 || d % 7 == 5) w *= 0.6;
    if (d >= 90 && d < 100) w *= 1.8;
    p.day_weights.push_back(w);
  }
  p.day_weights = detail::normalized(p.day_weights);
  return p;
}

inline const std::vector<std::string>& MockProfile::labels(const std::string& feature) const {
  if (feature == "computingsite") return sites;
  if (feature == "project") return projects;
  if (feature == "prodstep") return prodsteps;
  if (feature == "datatype") return datatypes;
  if (feature == "jobstatus") return statuses;
  throw SchemaError("'" + feature + "' is not a categorical mock feature");
}

inline std::vector<double> MockProfile::datatype_marginal() const {
  std::vector<double> out(datatypes.size(), 0.0);
  for (std::size_t j = 0; j < projects.size(); ++j)
    for (std::size_t d = 0; d < datatypes.size(); ++d) out[d] += project_weights[j] * datatype_given_project[j][d];
  return out;
}

inline std::vector<double> MockProfile::category_probabilities(const std::string& feature) const {
  if (feature == "computingsite") return site_weights;
  if (feature == "project") return project_weights;
  if (feature == "datatype") return datatype_marginal();
  std::vector<double> out;
  if (feature == "prodstep") {
    out.assign(prodsteps.size(), 0.0);
    for (std::size_t j = 0; j < projects.size(); ++j)
      for (std::size_t k = 0; k < prodsteps.size(); ++k) out[k] += project_weights[j] * prodstep_given_project[j][k];
    return out;
  }
  if (feature == "jobstatus") {
    out.assign(statuses.size(), 0.0);
    for (std::size_t s = 0; s < sites.size(); ++s)
      for (std::size_t k = 0; k < statuses.size(); ++k) out[k] += site_weights[s] * status_given_site[s][k];
    return out;
  }
  throw SchemaError("'" + feature + "' is not a categorical mock feature");
}

inline std::size_t MockProfile::files_horizon(std::size_t datatype) const {
  // Smallest m with P(nfiles > m) = (1-p)^m below 1e-10.
  double q = extra_files[datatype] / (1.0 + extra_files[datatype]);
  return static_cast<std::size_t>(std::ceil(std::log(1e-10) / std::log(q))) + 1;
}

inline std::vector<double> MockProfile::nfiles_pmf(std::size_t datatype, std::size_t max_files) const {
  double p = 1.0 / (1.0 + extra_files[datatype]);
  std::vector<double> pmf(max_files + 1, 0.0);
  double tail = p;
  for (std::size_t k = 1; k <= max_files; ++k) {
    pmf[k] = tail;
    tail *= 1.0 - p;
  }
  return pmf;
}

inline double MockProfile::numeric_cdf(const std::string& feature, double x) const {
  const auto pd = datatype_marginal();
  if (feature == "nfiles") {
    if (x < 1.0) return 0.0;
    double k = std::floor(x);
    double f = 0.0;
    for (std::size_t d = 0; d < datatypes.size(); ++d) {
      double q = extra_files[d] / (1.0 + extra_files[d]);
      f += pd[d] * (1.0 - std::pow(q, k));
    }
    return f;
  }
  if (feature == "size") {
    if (x <= 0.0) return 0.0;
    double f = 0.0;
    for (std::size_t d = 0; d < datatypes.size(); ++d) {
      auto horizon = files_horizon(d);
      auto pmf = nfiles_pmf(d, horizon);
      for (std::size_t k = 1; k <= horizon; ++k)
        f += pd[d] * pmf[k] * normal_cdf((std::log(x / static_cast<double>(k)) - log_file_bytes[d]) / size_sigma);
    }
    return f;
  }
  if (feature == "workload") {
    if (x <= 0.0) return 0.0;
    double lx = std::log(x);
    double f = 0.0;
    for (std::size_t d = 0; d < datatypes.size(); ++d) {
      auto horizon = files_horizon(d);
      auto pmf = nfiles_pmf(d, horizon);
      for (std::size_t k = 1; k <= horizon; ++k) {
        double base = datatype_offsets[d] + files_exponent * std::log(static_cast<double>(k));
        for (std::size_t s = 0; s < sites.size(); ++s) {
          double mu = base + site_offsets[s];
          double c = noise_sigma > 0.0 ? normal_cdf((lx - mu) / noise_sigma) : (lx >= mu ? 1.0 : 0.0);
          f += pd[d] * pmf[k] * site_weights[s] * c;
        }
      }
    }
    return f;
  }
  if (feature == "creationtime") {
    double u = (x - static_cast<double>(start_epoch)) / 86400.0;
    if (u <= 0.0) return 0.0;
    double f = 0.0;
    for (std::size_t d = 0; d < day_weights.size(); ++d) {
      double within = std::clamp(u - static_cast<double>(d), 0.0, 1.0);
      f += day_weights[d] * within;
    }
    return std::min(f, 1.0);
  }
  throw SchemaError("'" + feature + "' is not a numerical mock feature");
}

// Deterministic for (profile, n, seed). Rows are drawn one at a time from a
// single generator in a fixed order.
inline Table generate_mock_table(const MockProfile& p, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DataError("mock table needs at least one row");
  Rng rng = substream(seed, 0x30C4);
  auto make = [](const std::vector<double>& w) { return std::discrete_distribution<std::size_t>(w.begin(), w.end()); };
  auto site_dist = make(p.site_weights);
  auto project_dist = make(p.project_weights);
  auto day_dist = make(p.day_weights);
  std::vector<std::discrete_distribution<std::size_t>> prodstep_dist, datatype_dist, status_dist;
  for (const auto& w : p.prodstep_given_project) prodstep_dist.push_back(make(w));
  for (const auto& w : p.datatype_given_project) datatype_dist.push_back(make(w));
  for (const auto& w : p.status_given_site) status_dist.push_back(make(w));
  std::vector<std::geometric_distribution<long long>> files_dist;
  for (double m : p.extra_files) files_dist.emplace_back(1.0 / (1.0 + m));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<std::int64_t> second(0, 86399);

  std::vector<JobRecord> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    JobRecord r;
    auto s = site_dist(rng);
    auto j = project_dist(rng);
    auto k = prodstep_dist[j](rng);
    auto d = datatype_dist[j](rng);
    r.computingsite = p.sites[s];
    r.project = p.projects[j];
    r.prodstep = p.prodsteps[k];
    r.datatype = p.datatypes[d];
    r.nfiles = 1 + files_dist[d](rng);
    double z_size = gauss(rng);
    r.size = std::llround(static_cast<double>(r.nfiles) * std::exp(p.log_file_bytes[d] + p.size_sigma * z_size));
    double z_work = gauss(rng);
    double lw = p.site_offsets[s] + p.datatype_offsets[d] + p.files_exponent * std::log(static_cast<double>(r.nfiles)) +
                p.noise_sigma * z_work;
    r.workload = std::exp(lw);
    r.jobstatus = p.statuses[status_dist[s](rng)];
    auto day = static_cast<std::int64_t>(day_dist(rng));
    r.creationtime = p.start_epoch + 86400 * day + second(rng);
    rows.push_back(std::move(r));
  }
  return make_job_table(rows);
}

// The noise-free part of ln(workload) for a job table drawn from `p`.
inline double mock_log_workload_mean(const MockProfile& p, const JobRecord& r) {
  auto idx = [](const std::vector<std::string>& v, const std::string& x) {
    auto it = std::find(v.begin(), v.end(), x);
    if (it == v.end()) throw LookupError("label '" + x + "' not in mock profile");
    return static_cast<std::size_t>(it - v.begin());
  };
  return p.site_offsets[idx(p.sites, r.computingsite)] + p.datatype_offsets[idx(p.datatypes, r.datatype)] +
         p.files_exponent * std::log(static_cast<double>(r.nfiles));
}

inline SiteCatalog mock_site_catalog(const MockProfile& p) {
  std::map<std::string, double> rates;
  for (std::size_t s = 0; s < p.sites.size(); ++s) rates[p.sites[s]] = p.site_rates[s];
  return SiteCatalog(std::move(rates), 1.0);
}

// Expands a mock job table into a raw trace that the ingest path turns back
// into (almost exactly) the same table. A fraction of extra non-DAOD and
// unparseable-name rows is interleaved to exercise the filter funnel.
inline std::vector<RawJobRecord> mock_raw_trace(const MockProfile& p, const Table& jobs, std::uint64_t seed,
                                                double noise_row_fraction = 0.05) {
  auto catalog = mock_site_catalog(p);
  Rng rng = substream(seed, 0x7EACE);
  std::vector<RawJobRecord> out;
  out.reserve(jobs.rows() + static_cast<std::size_t>(noise_row_fraction * static_cast<double>(jobs.rows())) + 1);
  auto raw_from = [&](const JobRecord& j, const std::string& datatype, const std::string& tag) {
    RawJobRecord r;
    r.creation_time = j.creationtime;
    r.computing_site = j.computingsite;
    r.dataset_name = j.project + "." + std::to_string(500000 + uniform_index(rng, 400000)) + "." + tag + "." +
                     j.prodstep + "." + datatype + ".e8514_s4162_r14622_p5855";
    r.n_input_files = j.nfiles;
    r.input_file_bytes = j.size;
    r.job_status = j.jobstatus;
    r.n_cores = uniform01(rng) < 0.6 ? 8 : 1;
    r.cpu_time = j.workload / (static_cast<double>(r.n_cores) * catalog.rate(j.computingsite));
    return r;
  };
  for (std::size_t i = 0; i < jobs.rows(); ++i) {
    auto j = job_record_at(jobs, i);
    if (uniform01(rng) < noise_row_fraction) {
      double u = uniform01(rng);
      if (u < 0.8) {
        out.push_back(raw_from(j, u < 0.5 ? "AOD" : "HITS", "PhPy8EG_A14"));
      } else {
        auto r = raw_from(j, j.datatype, "x");
        r.dataset_name = "user." + j.computingsite + ".scratch";
        out.push_back(r);
      }
    }
    out.push_back(raw_from(j, j.datatype, "PhPy8EG_A14"));
  }
  return out;
}

inline void write_trace_csv(std::ostream& out, const std::vector<RawJobRecord>& records) {
  for (std::size_t k = 0; k < kTraceColumns.size(); ++k) out << (k ? "," : "") << kTraceColumns[k];
  out << '\n';
  for (const auto& r : records) {
    out << r.creation_time << ',' << csv::quote(r.computing_site) << ',' << csv::quote(r.dataset_name) << ','
        << r.n_input_files << ',' << r.input_file_bytes << ',' << csv::quote(r.job_status) << ',' << r.n_cores << ','
        << format_number(r.cpu_time, false) << '\n';
  }
}

}  // namespace wforge
