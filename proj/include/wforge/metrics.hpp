#pragma once
// Fidelity, privacy and utility metrics comparing a real and a synthetic table.

#include <cmath>
#include <cstdio>
#include <map>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "wforge/gbdt.hpp"
#include "wforge/knn.hpp"
#include "wforge/preprocess.hpp"
#include "wforge/table.hpp"

namespace wforge {

// A statistic with an explicit marker for the degenerate-input conventions.
struct Flagged {
  double value = 0.0;
  bool degenerate = false;
};

// ---------------------------------------------------------------------------
// Marginal distances
// ---------------------------------------------------------------------------

// W1 between empirical distributions after min-max scaling by the real range.
inline double wasserstein_1d(std::vector<double> real, std::vector<double> synth, bool normalize = true) {
  if (real.empty() || synth.empty()) throw DataError("wasserstein distance needs non-empty samples");
  std::sort(real.begin(), real.end());
  std::sort(synth.begin(), synth.end());
  double range = 1.0;
  if (normalize) {
    range = real.back() - real.front();
    if (!(range > 0.0)) throw DegenerateFeatureError("real sample is constant; cannot normalise");
  }
  // integral of |F_real - F_synth| over the merged support
  const double n = static_cast<double>(real.size()), m = static_cast<double>(synth.size());
  std::size_t i = 0, j = 0;
  double prev = std::min(real.front(), synth.front()), acc = 0.0;
  while (i < real.size() || j < synth.size()) {
    double x = j == synth.size() || (i < real.size() && real[i] <= synth[j]) ? real[i] : synth[j];
    acc += std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m) * (x - prev);
    while (i < real.size() && real[i] == x) ++i;
    while (j < synth.size() && synth[j] == x) ++j;
    prev = x;
  }
  return acc / range;
}

template <class Label>
std::map<Label, double> count_labels(const std::vector<Label>& xs) {
  std::map<Label, double> c;
  for (const auto& x : xs) c[x] += 1.0;
  return c;
}

// Jensen-Shannon divergence in bits over the union support.
inline double jsd(const std::map<std::string, double>& p_counts, const std::map<std::string, double>& q_counts) {
  double tp = 0.0, tq = 0.0;
  for (const auto& [k, v] : p_counts) tp += v;
  for (const auto& [k, v] : q_counts) tq += v;
  if (!(tp > 0.0) || !(tq > 0.0)) throw DataError("jsd needs positive totals");
  // Weighting each term by the raw count and dividing by the total once keeps
  // the disjoint case at exactly one bit.
  double sp = 0.0, sq = 0.0;
  auto half_term = [](double c, double p, double m) { return c > 0.0 ? c * std::log2(p / m) : 0.0; };
  for (const auto& [k, cp] : p_counts) {
    auto it = q_counts.find(k);
    double cq = it == q_counts.end() ? 0.0 : it->second;
    double p = cp / tp, q = cq / tq, mid = 0.5 * (p + q);
    sp += half_term(cp, p, mid);
    sq += half_term(cq, q, mid);
  }
  for (const auto& [k, cq] : q_counts) {
    if (p_counts.count(k)) continue;
    double q = cq / tq;
    sq += half_term(cq, q, 0.5 * q);
  }
  return std::clamp(0.5 * sp / tp + 0.5 * sq / tq, 0.0, 1.0);
}

inline double jsd(const std::vector<std::string>& p, const std::vector<std::string>& q) {
  return jsd(count_labels(p), count_labels(q));
}

// ---------------------------------------------------------------------------
// Pairwise association
// ---------------------------------------------------------------------------

inline Flagged pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DataError("pearson needs equal lengths of at least 2");
  const double n = static_cast<double>(x.size());
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return {0.0, true};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

// Dense codes in order of first appearance.
template <class Label>
std::pair<std::vector<std::uint32_t>, std::size_t> code_labels(const std::vector<Label>& xs) {
  std::unordered_map<Label, std::uint32_t> ids;
  std::vector<std::uint32_t> codes(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) codes[i] = ids.try_emplace(xs[i], static_cast<std::uint32_t>(ids.size())).first->second;
  return {codes, ids.size()};
}

inline Flagged correlation_ratio(const std::vector<std::string>& categories, const std::vector<double>& values) {
  if (categories.size() != values.size() || values.empty()) throw DataError("correlation ratio needs equal, non-empty inputs");
  auto [codes, k] = code_labels(categories);
  const double n = static_cast<double>(values.size());
  std::vector<double> sum(k, 0.0), cnt(k, 0.0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum[codes[i]] += values[i];
    cnt[codes[i]] += 1.0;
  }
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss_total = 0.0, ss_between = 0.0;
  for (double v : values) ss_total += (v - mean) * (v - mean);
  for (std::size_t g = 0; g < k; ++g) ss_between += cnt[g] * (sum[g] / cnt[g] - mean) * (sum[g] / cnt[g] - mean);
  if (!(ss_total > 0.0)) return {0.0, true};
  return {std::clamp(std::sqrt(ss_between / ss_total), 0.0, 1.0), false};
}

// U(x | y) with natural-log plug-in entropies.
inline Flagged theils_u(const std::vector<std::string>& x, const std::vector<std::string>& y) {
  if (x.size() != y.size() || x.empty()) throw DataError("theil's U needs equal, non-empty inputs");
  auto [cx, kx] = code_labels(x);
  auto [cy, ky] = code_labels(y);
  const double n = static_cast<double>(x.size());
  std::vector<double> px(kx, 0.0), py(ky, 0.0);
  std::unordered_map<std::uint64_t, double> joint;
  for (std::size_t i = 0; i < x.size(); ++i) {
    px[cx[i]] += 1.0;
    py[cy[i]] += 1.0;
    joint[(static_cast<std::uint64_t>(cx[i]) << 32) | cy[i]] += 1.0;
  }
  double hx = 0.0;
  for (double c : px) hx -= c / n * std::log(c / n);
  if (!(hx > 0.0)) return {1.0, true};
  // sum in key order so the result does not depend on hash iteration order
  std::vector<std::pair<std::uint64_t, double>> cells(joint.begin(), joint.end());
  std::sort(cells.begin(), cells.end());
  double hxy = 0.0;
  for (const auto& [key, c] : cells) hxy -= c / n * std::log(c / py[key & 0xffffffffu]);
  return {std::clamp((hx - hxy) / hx, 0.0, 1.0), false};
}

struct CorrelationMatrix {
  std::vector<std::string> features;
  std::vector<std::vector<std::string>> methods;
  Matrix values;
  std::vector<std::string> flags;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json v = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      nlohmann::ordered_json row = nlohmann::ordered_json::array();
      for (Eigen::Index j = 0; j < values.cols(); ++j) row.push_back(values(i, j));
      v.push_back(row);
    }
    return {{"features", features}, {"methods", methods}, {"values", v}};
  }
};

inline CorrelationMatrix correlation_matrix(const Table& t) {
  if (t.rows() == 0) throw DataError("correlation matrix of an empty table");
  const auto& feats = t.schema().features;
  const std::size_t p = feats.size();
  CorrelationMatrix cm;
  cm.values = Matrix::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  cm.methods.assign(p, std::vector<std::string>(p));
  for (const auto& f : feats) cm.features.push_back(f.name);
  std::vector<std::string> flags(p * p);
  parallel_for(p * p, 1, [&](std::size_t b, std::size_t e) {
    for (std::size_t cell = b; cell < e; ++cell) {
      const std::size_t i = cell / p, j = cell % p;
      const bool ni = feats[i].kind == FeatureKind::numerical, nj = feats[j].kind == FeatureKind::numerical;
      Flagged r;
      std::string method;
      if (ni && nj) {
        method = "pearson";
        r = pearson(t.numbers(i), t.numbers(j));
        if (i == j && !r.degenerate) r.value = 1.0;
      } else if (ni != nj) {
        method = "correlation_ratio";
        r = ni ? correlation_ratio(t.labels(j), t.numbers(i)) : correlation_ratio(t.labels(i), t.numbers(j));
      } else {
        method = "theils_u";
        r = theils_u(t.labels(i), t.labels(j));
        if (i == j && !r.degenerate) r.value = 1.0;
      }
      cm.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r.value;
      cm.methods[i][j] = method;
      if (r.degenerate) flags[cell] = method + ":" + feats[i].name + "|" + feats[j].name + ":degenerate";
    }
  });
  for (auto& f : flags)
    if (!f.empty()) cm.flags.push_back(std::move(f));
  return cm;
}

// Root-mean-square difference over off-diagonal cells.
inline double diff_corr(const CorrelationMatrix& a, const CorrelationMatrix& b) {
  if (a.features != b.features || a.values.rows() != b.values.rows() || a.values.cols() != b.values.cols())
    throw SchemaError("correlation matrices have different layouts");
  const Eigen::Index p = a.values.rows();
  if (p < 2) return 0.0;
  double s = 0.0;
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < p; ++j)
      if (i != j) s += (a.values(i, j) - b.values(i, j)) * (a.values(i, j) - b.values(i, j));
  return std::sqrt(s / static_cast<double>(p * (p - 1)));
}

// ---------------------------------------------------------------------------
// Privacy: distance to closest record
// ---------------------------------------------------------------------------

// `head` leading columns are numeric; the rest may be grouped for speed, as
// one-hot blocks of the given widths when those are supplied.
inline double dcr(const Matrix& train, const Matrix& synth, std::size_t head, std::vector<std::size_t> block_widths = {}) {
  if (train.rows() == 0 || synth.rows() == 0) throw DataError("dcr needs non-empty inputs");
  if (train.cols() != synth.cols()) throw SchemaError("dcr inputs have different widths");
  NeighborIndex index(std::make_shared<const Matrix>(train), head, std::move(block_widths));
  std::vector<double> nearest(static_cast<std::size_t>(synth.rows()));
  const auto d = static_cast<std::size_t>(synth.cols());
  parallel_for(nearest.size(), 256, [&](std::size_t b, std::size_t e) {
    for (std::size_t r = b; r < e; ++r) nearest[r] = std::sqrt(index.nearest_sq(synth.data() + r * d));
  });
  double s = std::accumulate(nearest.begin(), nearest.end(), 0.0);
  return s / static_cast<double>(nearest.size()) / std::sqrt(static_cast<double>(d));
}

inline double dcr(const Matrix& train, const Matrix& synth) { return dcr(train, synth, static_cast<std::size_t>(train.cols())); }

inline double dcr(const EncodedMatrix& train, const EncodedMatrix& synth) {
  if (!(train.layout == synth.layout)) throw SchemaError("dcr inputs have different layouts");
  return dcr(train.values, synth.values, train.layout.numeric_dim(), train.layout.category_sizes());
}

// ---------------------------------------------------------------------------
// Utility: regression efficacy on ln(target)
// ---------------------------------------------------------------------------

struct MlefResult {
  double mse = 0.0;
  std::size_t train_rows = 0, test_rows = 0;
  std::size_t excluded_train = 0, excluded_test = 0;  // non-positive target
  std::size_t unseen_categories = 0;                  // test cells encoded as zero blocks
  std::vector<std::string> dropped_features;          // constant numeric inputs
};

inline MlefResult mlef(const Table& train, const Table& test, const GbdtConfig& cfg = GbdtConfig::desk(),
                       const std::string& target = "workload") {
  if (!(train.schema() == test.schema())) throw SchemaError("train and test schemas differ");
  const auto& feats = train.schema().features;
  const std::size_t ti = train.schema().index_of(target);
  MlefResult res;

  auto positive_rows = [&](const Table& t, std::size_t& excluded) {
    std::vector<std::size_t> rows;
    const auto& y = t.numbers(ti);
    for (std::size_t r = 0; r < y.size(); ++r) {
      if (y[r] > 0.0)
        rows.push_back(r);
      else
        ++excluded;
    }
    return rows;
  };
  auto tr_rows = positive_rows(train, res.excluded_train);
  auto te_rows = positive_rows(test, res.excluded_test);
  if (tr_rows.size() < 2) throw DataError("regression efficacy needs at least 2 training rows with positive " + target);
  if (te_rows.empty()) throw DataError("regression efficacy needs test rows with positive " + target);
  res.train_rows = tr_rows.size();
  res.test_rows = te_rows.size();

  Schema inputs;
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < feats.size(); ++c) {
    if (c == ti) continue;
    if (feats[c].kind == FeatureKind::numerical) {
      const auto& v = train.numbers(c);
      bool constant = true;
      for (auto r : tr_rows)
        if (v[r] != v[tr_rows.front()]) {
          constant = false;
          break;
        }
      if (constant) {
        res.dropped_features.push_back(feats[c].name);
        continue;
      }
    }
    inputs.features.push_back(feats[c]);
    cols.push_back(c);
  }
  auto project = [&](const Table& t, const std::vector<std::size_t>& rows) {
    Table out(inputs);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (inputs.features[k].kind == FeatureKind::numerical)
        for (auto r : rows) out.numbers(k).push_back(t.numbers(cols[k])[r]);
      else
        for (auto r : rows) out.labels(k).push_back(t.labels(cols[k])[r]);
    }
    return out;
  };
  auto log_target = [&](const Table& t, const std::vector<std::size_t>& rows) {
    std::vector<double> y;
    y.reserve(rows.size());
    for (auto r : rows) y.push_back(std::log(t.numbers(ti)[r]));
    return y;
  };

  Matrix xtr, xte;
  if (inputs.features.empty()) {
    xtr = Matrix::Zero(static_cast<Eigen::Index>(tr_rows.size()), 0);
    xte = Matrix::Zero(static_cast<Eigen::Index>(te_rows.size()), 0);
  } else {
    Table ptr = project(train, tr_rows);
    auto enc = TableEncoder::fit(ptr);
    xtr = enc.encode(ptr).values;
    xte = enc.encode(project(test, te_rows), UnknownCategory::zero_block, &res.unseen_categories).values;
  }
  auto model = fit_gbdt(xtr, log_target(train, tr_rows), cfg);
  res.mse = mse(model.predict(xte), log_target(test, te_rows));
  return res;
}

// ---------------------------------------------------------------------------
// Full report
// ---------------------------------------------------------------------------

struct EvalConfig {
  GbdtConfig regressor = GbdtConfig::desk();
  std::size_t bins = 64;
  std::size_t top_k = 5;
  std::string target = "workload";
};

struct NumericHistogram {
  std::vector<double> edges, real, synth;
  std::size_t synth_below = 0, synth_above = 0;
};

struct CategoryTop {
  std::vector<std::string> labels;
  std::vector<double> real, synth;
  double real_other = 0.0, synth_other = 0.0;
};

struct MetricsReport {
  std::vector<std::pair<std::string, double>> wd, jsd;
  double wd_mean = 0.0, jsd_mean = 0.0;
  CorrelationMatrix corr_real, corr_synth;
  double diff_corr = 0.0, dcr = 0.0;
  MlefResult mlef_train, mlef_synth;
  double mlef_diff = 0.0;
  std::vector<std::pair<std::string, NumericHistogram>> numeric_hist;
  std::vector<std::pair<std::string, CategoryTop>> category_top;
  std::vector<std::string> flags;
  std::size_t train_rows = 0, synth_rows = 0, test_rows = 0;

  nlohmann::ordered_json to_json() const {
    using J = nlohmann::ordered_json;
    J w = J::object(), s = J::object(), h = J::object();
    for (const auto& [k, v] : wd) w[k] = v;
    w["mean"] = wd_mean;
    for (const auto& [k, v] : jsd) s[k] = v;
    s["mean"] = jsd_mean;
    for (const auto& [k, v] : numeric_hist)
      h[k] = {{"kind", "numerical"}, {"edges", v.edges}, {"real", v.real}, {"synth", v.synth},
              {"synth_below", v.synth_below}, {"synth_above", v.synth_above}};
    for (const auto& [k, v] : category_top)
      h[k] = {{"kind", "categorical"}, {"labels", v.labels}, {"real", v.real}, {"synth", v.synth},
              {"real_other", v.real_other}, {"synth_other", v.synth_other}};
    auto mlef_detail = [](const MlefResult& r) {
      return J{{"rows", r.train_rows}, {"test_rows", r.test_rows}, {"excluded_rows", r.excluded_train},
               {"excluded_test_rows", r.excluded_test}, {"unseen_categories", r.unseen_categories},
               {"dropped_features", r.dropped_features}};
    };
    return {{"wd", w},
            {"jsd", s},
            {"corr_real", corr_real.to_json()},
            {"corr_synth", corr_synth.to_json()},
            {"diff_corr", diff_corr},
            {"dcr", dcr},
            {"mlef",
             {{"train", mlef_train.mse},
              {"synthetic", mlef_synth.mse},
              {"diff", mlef_diff},
              {"train_detail", mlef_detail(mlef_train)},
              {"synthetic_detail", mlef_detail(mlef_synth)}}},
            {"histograms", h},
            {"flags", flags},
            {"rows", {{"train", train_rows}, {"synth", synth_rows}, {"test", test_rows}}}};
  }

  // One row: WD, JSD, diff-CORR, DCR, diff-MLEF.
  std::string summary_row() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-10s %-10s %-10s %-10s %-10s\n%-10.6f %-10.6f %-10.6f %-10.6f %-10.6f", "WD", "JSD",
                  "diff-CORR", "DCR", "diff-MLEF", wd_mean, jsd_mean, diff_corr, dcr, mlef_diff);
    return buf;
  }
};

// Throws SchemaError naming the first missing key.
inline void validate_report(const nlohmann::json& j) {
  for (const char* k : {"wd", "jsd", "corr_real", "corr_synth", "diff_corr", "dcr", "mlef", "histograms", "flags"})
    if (!j.contains(k)) throw SchemaError(std::string("report is missing '") + k + "'");
  for (const char* k : {"train", "synthetic", "diff"})
    if (!j["mlef"].contains(k)) throw SchemaError(std::string("report is missing 'mlef.") + k + "'");
  if (!j["wd"].contains("mean") || !j["jsd"].contains("mean")) throw SchemaError("report is missing a 'mean' entry");
  for (const char* k : {"corr_real", "corr_synth"}) {
    const auto& m = j[k];
    const auto p = m.at("features").size();
    if (m.at("values").size() != p) throw SchemaError(std::string(k) + " is not square");
    for (const auto& row : m["values"])
      if (row.size() != p) throw SchemaError(std::string(k) + " is not square");
  }
}

inline NumericHistogram numeric_histogram(const std::vector<double>& real, const std::vector<double>& synth, std::size_t bins) {
  NumericHistogram h;
  auto [lo_it, hi_it] = std::minmax_element(real.begin(), real.end());
  const double lo = *lo_it, hi = *hi_it, width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(b == bins && hi > lo ? hi : lo + width * static_cast<double>(b));
  h.real.assign(bins, 0.0);
  h.synth.assign(bins, 0.0);
  auto bin_of = [&](double v) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    return std::min(b, bins - 1);
  };
  for (double v : real) h.real[bin_of(v)] += 1.0;
  for (double v : synth) {
    if (v < lo)
      ++h.synth_below;
    else if (v > hi)
      ++h.synth_above;
    else
      h.synth[bin_of(v)] += 1.0;
  }
  for (auto& c : h.real) c /= static_cast<double>(real.size());
  for (auto& c : h.synth) c /= static_cast<double>(synth.size());
  return h;
}

inline CategoryTop category_top(const std::vector<std::string>& real, const std::vector<std::string>& synth, std::size_t k) {
  auto rc = count_labels(real), sc = count_labels(synth);
  std::vector<std::pair<std::string, double>> ordered(rc.begin(), rc.end());
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  CategoryTop t;
  double real_in = 0.0, synth_in = 0.0;
  for (std::size_t i = 0; i < std::min(k, ordered.size()); ++i) {
    const auto& label = ordered[i].first;
    t.labels.push_back(label);
    double r = ordered[i].second / static_cast<double>(real.size());
    double s = sc.count(label) ? sc[label] / static_cast<double>(synth.size()) : 0.0;
    t.real.push_back(r);
    t.synth.push_back(s);
    real_in += ordered[i].second;
    synth_in += sc.count(label) ? sc[label] : 0.0;
  }
  t.real_other = (static_cast<double>(real.size()) - real_in) / static_cast<double>(real.size());
  t.synth_other = (static_cast<double>(synth.size()) - synth_in) / static_cast<double>(synth.size());
  return t;
}

inline MetricsReport evaluate(const Table& train, const Table& synth, const Table& test, const EvalConfig& cfg = {}) {
  if (!(train.schema() == synth.schema()) || !(train.schema() == test.schema()))
    throw SchemaError("train, synthetic and test tables must share a schema");
  if (train.rows() == 0 || synth.rows() == 0 || test.rows() == 0) throw DataError("evaluation needs non-empty tables");
  if (cfg.bins == 0) throw DataError("histogram needs at least one bin");
  MetricsReport rep;
  rep.train_rows = train.rows();
  rep.synth_rows = synth.rows();
  rep.test_rows = test.rows();
  const auto& feats = train.schema().features;

  for (std::size_t c = 0; c < feats.size(); ++c) {
    const auto& name = feats[c].name;
    if (feats[c].kind == FeatureKind::numerical) {
      double w;
      try {
        w = wasserstein_1d(train.numbers(c), synth.numbers(c));
      } catch (const DegenerateFeatureError&) {
        w = wasserstein_1d(train.numbers(c), synth.numbers(c), false);
        rep.flags.push_back("wd:" + name + ":constant_real_unnormalised");
      }
      rep.wd.emplace_back(name, w);
      rep.numeric_hist.emplace_back(name, numeric_histogram(train.numbers(c), synth.numbers(c), cfg.bins));
    } else {
      rep.jsd.emplace_back(name, jsd(train.labels(c), synth.labels(c)));
      rep.category_top.emplace_back(name, category_top(train.labels(c), synth.labels(c), cfg.top_k));
    }
  }
  auto mean_of = [](const std::vector<std::pair<std::string, double>>& v) {
    double s = 0.0;
    for (const auto& [k, x] : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  rep.wd_mean = mean_of(rep.wd);
  rep.jsd_mean = mean_of(rep.jsd);

  rep.corr_real = correlation_matrix(train);
  rep.corr_synth = correlation_matrix(synth);
  rep.diff_corr = diff_corr(rep.corr_real, rep.corr_synth);
  for (const auto& f : rep.corr_real.flags) rep.flags.push_back("corr_real:" + f);
  for (const auto& f : rep.corr_synth.flags) rep.flags.push_back("corr_synth:" + f);

  {
    auto enc = TableEncoder::fit(train);
    std::size_t unseen = 0;
    auto xt = enc.encode(train);
    auto xs = enc.encode(synth, UnknownCategory::zero_block, &unseen);
    rep.dcr = dcr(xt, xs);
    if (unseen) rep.flags.push_back("dcr:unseen_synthetic_categories:" + std::to_string(unseen));
  }

  rep.mlef_train = mlef(train, test, cfg.regressor, cfg.target);
  rep.mlef_synth = mlef(synth, test, cfg.regressor, cfg.target);
  rep.mlef_diff = rep.mlef_synth.mse - rep.mlef_train.mse;
  for (const auto* r : {&rep.mlef_train, &rep.mlef_synth}) {
    const std::string tag = r == &rep.mlef_train ? "mlef_train" : "mlef_synthetic";
    if (r->excluded_train) rep.flags.push_back(tag + ":excluded_nonpositive_rows:" + std::to_string(r->excluded_train));
    if (r->excluded_test) rep.flags.push_back(tag + ":excluded_nonpositive_test_rows:" + std::to_string(r->excluded_test));
    if (r->unseen_categories) rep.flags.push_back(tag + ":unseen_test_categories:" + std::to_string(r->unseen_categories));
    for (const auto& f : r->dropped_features) rep.flags.push_back(tag + ":dropped_constant_feature:" + f);
  }
  return rep;
}

}  // namespace wforge
