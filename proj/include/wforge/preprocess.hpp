#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "wforge/common.hpp"
#include "wforge/stats.hpp"
#include "wforge/table.hpp"

namespace wforge {

// ---------------------------------------------------------------------------
// Gaussian quantile transform
// ---------------------------------------------------------------------------

inline constexpr double kDefaultClampBound = 5.2;
inline constexpr std::size_t kMaxQuantiles = 1000;

// Maps a numeric feature to a standard normal through its empirical CDF.
// The CDF is piecewise linear through `q` evenly spaced empirical quantiles;
// runs of equal references (ties) map to the middle of their rank interval.
class QuantileTransformer {
 public:
  QuantileTransformer() = default;
  QuantileTransformer(std::string feature, std::vector<double> references, double clamp_bound = kDefaultClampBound)
      : feature_(std::move(feature)), refs_(std::move(references)), clamp_(clamp_bound) {
    if (refs_.size() < 2) throw DataError("quantile transformer needs at least 2 references");
    if (!std::is_sorted(refs_.begin(), refs_.end())) throw DataError("quantile references must be non-decreasing");
    if (!(clamp_ > 0.0)) throw DataError("clamp bound must be positive");
    if (refs_.front() == refs_.back()) throw DegenerateFeatureError("feature '" + feature_ + "' is constant");
  }

  const std::string& feature() const { return feature_; }
  const std::vector<double>& references() const { return refs_; }
  double clamp_bound() const { return clamp_; }
  // Smallest CDF level that is not clamped: Phi(-clamp_bound).
  double epsilon() const { return normal_cdf(-clamp_); }

  double level(std::size_t i) const { return static_cast<double>(i) / static_cast<double>(refs_.size() - 1); }

  // Empirical CDF estimate in [0, 1].
  double cdf(double v) const {
    if (v < refs_.front()) return 0.0;
    if (v > refs_.back()) return 1.0;
    auto lo = static_cast<std::size_t>(std::lower_bound(refs_.begin(), refs_.end(), v) - refs_.begin());
    auto hi = static_cast<std::size_t>(std::upper_bound(refs_.begin(), refs_.end(), v) - refs_.begin());
    if (lo != hi) return 0.5 * (level(lo) + level(hi - 1));
    // refs_[lo - 1] < v < refs_[lo]
    double a = refs_[lo - 1], b = refs_[lo];
    return level(lo - 1) + (v - a) / (b - a) * (level(lo) - level(lo - 1));
  }

  double transform(double v) const {
    double f = cdf(v);
    double eps = epsilon();
    if (f <= eps) return -clamp_;
    if (f >= 1.0 - eps) return clamp_;
    return std::clamp(normal_quantile(f), -clamp_, clamp_);
  }

  double inverse(double z) const {
    if (std::isnan(z)) throw DataError("cannot invert a NaN quantile score");
    if (z <= -clamp_) return refs_.front();
    if (z >= clamp_) return refs_.back();
    double f = normal_cdf(z);
    double pos = f * static_cast<double>(refs_.size() - 1);
    auto i = static_cast<std::size_t>(std::floor(pos));
    if (i >= refs_.size() - 1) return refs_.back();
    double frac = pos - static_cast<double>(i);
    return refs_[i] + frac * (refs_[i + 1] - refs_[i]);
  }

  nlohmann::json to_json() const {
    return {{"feature", feature_}, {"references", refs_}, {"clamp_bound", clamp_}};
  }
  static QuantileTransformer from_json(const nlohmann::json& j) {
    return QuantileTransformer(j.at("feature").get<std::string>(), j.at("references").get<std::vector<double>>(),
                               j.at("clamp_bound").get<double>());
  }

 private:
  std::string feature_;
  std::vector<double> refs_;
  double clamp_ = kDefaultClampBound;
};

// q evenly spaced empirical quantiles (linear interpolation between order
// statistics). q defaults to min(1000, n).
inline QuantileTransformer fit_quantile(const std::vector<double>& values, std::size_t q = 0,
                                        const std::string& feature = "", double clamp_bound = kDefaultClampBound) {
  if (values.empty()) throw DataError("cannot fit a quantile transform on no values");
  if (q == 0) q = std::min(kMaxQuantiles, values.size());
  if (q < 2) q = 2;
  for (double v : values)
    if (!std::isfinite(v)) throw DataError("feature '" + feature + "' has non-finite values");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) throw DegenerateFeatureError("feature '" + feature + "' is constant");
  std::vector<double> refs(q);
  const double last = static_cast<double>(sorted.size() - 1);
  for (std::size_t i = 0; i < q; ++i) {
    double pos = last * static_cast<double>(i) / static_cast<double>(q - 1);
    auto k = static_cast<std::size_t>(std::floor(pos));
    double frac = pos - static_cast<double>(k);
    refs[i] = k + 1 < sorted.size() ? sorted[k] + frac * (sorted[k + 1] - sorted[k]) : sorted[k];
  }
  refs.back() = sorted.back();
  // Interpolation may lose monotonicity by an ulp.
  for (std::size_t i = 1; i < q; ++i) refs[i] = std::max(refs[i], refs[i - 1]);
  return QuantileTransformer(feature, std::move(refs), clamp_bound);
}

inline double transform_quantile(const QuantileTransformer& t, double v) { return t.transform(v); }
inline double inverse_quantile(const QuantileTransformer& t, double z) { return t.inverse(z); }

// ---------------------------------------------------------------------------
// One-hot
// ---------------------------------------------------------------------------

class OneHotEncoder {
 public:
  OneHotEncoder() = default;
  OneHotEncoder(std::string feature, std::vector<std::string> vocabulary)
      : feature_(std::move(feature)), vocab_(std::move(vocabulary)) {
    for (std::size_t i = 0; i < vocab_.size(); ++i)
      if (!index_.emplace(vocab_[i], i).second)
        throw DataError("duplicate category '" + vocab_[i] + "' in vocabulary of '" + feature_ + "'");
  }

  const std::string& feature() const { return feature_; }
  const std::vector<std::string>& vocabulary() const { return vocab_; }
  std::size_t size() const { return vocab_.size(); }

  std::optional<std::size_t> index_of(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  nlohmann::json to_json() const { return {{"feature", feature_}, {"vocabulary", vocab_}}; }
  static OneHotEncoder from_json(const nlohmann::json& j) {
    return OneHotEncoder(j.at("feature").get<std::string>(), j.at("vocabulary").get<std::vector<std::string>>());
  }

 private:
  std::string feature_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Vocabulary ordered by descending count, ties lexicographic.
inline OneHotEncoder fit_onehot(const std::vector<std::string>& values, const std::string& feature = "") {
  if (values.empty()) throw DataError("cannot fit a one-hot encoder on no values");
  std::map<std::string, std::size_t> counts;
  for (const auto& v : values) ++counts[v];
  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> vocab;
  vocab.reserve(ordered.size());
  for (auto& [label, count] : ordered) vocab.push_back(label);
  return OneHotEncoder(feature, std::move(vocab));
}

// ---------------------------------------------------------------------------
// Table encoder
// ---------------------------------------------------------------------------

struct Block {
  std::string feature;
  FeatureKind kind = FeatureKind::numerical;
  std::size_t offset = 0;
  std::size_t width = 1;

  bool operator==(const Block&) const = default;
};

// Numerical features first (one column each, schema order), then one one-hot
// block per categorical feature.
struct Layout {
  std::vector<Block> blocks;

  std::size_t dim() const { return blocks.empty() ? 0 : blocks.back().offset + blocks.back().width; }
  std::size_t numeric_dim() const {
    std::size_t n = 0;
    for (const auto& b : blocks)
      if (b.kind == FeatureKind::numerical) n += b.width;
    return n;
  }
  std::vector<std::size_t> category_sizes() const {
    std::vector<std::size_t> out;
    for (const auto& b : blocks)
      if (b.kind == FeatureKind::categorical) out.push_back(b.width);
    return out;
  }
  std::vector<Block> categorical_blocks() const {
    std::vector<Block> out;
    for (const auto& b : blocks)
      if (b.kind == FeatureKind::categorical) out.push_back(b);
    return out;
  }

  nlohmann::json to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& b : blocks)
      arr.push_back({{"feature", b.feature}, {"kind", to_string(b.kind)}, {"offset", b.offset}, {"width", b.width}});
    return arr;
  }
  static Layout from_json(const nlohmann::json& j) {
    Layout l;
    for (const auto& b : j)
      l.blocks.push_back({b.at("feature").get<std::string>(),
                          b.at("kind").get<std::string>() == "numerical" ? FeatureKind::numerical : FeatureKind::categorical,
                          b.at("offset").get<std::size_t>(), b.at("width").get<std::size_t>()});
    return l;
  }
  std::uint64_t fingerprint() const { return fnv1a(to_json().dump()); }

  bool operator==(const Layout&) const = default;
};

struct EncodedMatrix {
  Matrix values;
  Layout layout;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
};

enum class UnknownCategory { error, zero_block };

class TableEncoder {
 public:
  TableEncoder() = default;

  // q = 0 selects min(1000, rows).
  static TableEncoder fit(const Table& table, std::size_t q = 0, double clamp_bound = kDefaultClampBound) {
    table.validate();
    if (table.rows() == 0) throw DataError("cannot fit encoders on an empty table");
    TableEncoder enc;
    enc.schema_ = table.schema();
    std::size_t offset = 0;
    for (std::size_t c = 0; c < table.cols(); ++c) {
      const auto& f = enc.schema_.features[c];
      if (f.kind != FeatureKind::numerical) continue;
      enc.quantiles_.push_back(fit_quantile(table.numbers(c), q, f.name, clamp_bound));
      enc.layout_.blocks.push_back({f.name, FeatureKind::numerical, offset++, 1});
    }
    for (std::size_t c = 0; c < table.cols(); ++c) {
      const auto& f = enc.schema_.features[c];
      if (f.kind != FeatureKind::categorical) continue;
      enc.onehots_.push_back(fit_onehot(table.labels(c), f.name));
      enc.layout_.blocks.push_back({f.name, FeatureKind::categorical, offset, enc.onehots_.back().size()});
      offset += enc.onehots_.back().size();
    }
    return enc;
  }

  const Schema& schema() const { return schema_; }
  const Layout& layout() const { return layout_; }
  const std::vector<QuantileTransformer>& quantiles() const { return quantiles_; }
  const std::vector<OneHotEncoder>& onehots() const { return onehots_; }

  // Unknown categories throw LookupError, or encode as all-zero blocks with
  // the count added to *unknown_count.
  EncodedMatrix encode(const Table& table, UnknownCategory policy = UnknownCategory::error,
                       std::size_t* unknown_count = nullptr) const {
    table.validate();
    if (!(table.schema() == schema_)) throw SchemaError("table schema does not match the fitted encoder");
    const std::size_t n = table.rows();
    EncodedMatrix out{Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(layout_.dim())), layout_};
    std::size_t qi = 0, oi = 0;
    for (const auto& block : layout_.blocks) {
      auto col = schema_.index_of(block.feature);
      if (block.kind == FeatureKind::numerical) {
        const auto& t = quantiles_[qi++];
        const auto& xs = table.numbers(col);
        for (std::size_t r = 0; r < n; ++r) {
          if (!std::isfinite(xs[r])) throw DataError("non-finite value in feature '" + block.feature + "'");
          out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(block.offset)) = t.transform(xs[r]);
        }
      } else {
        const auto& enc = onehots_[oi++];
        const auto& xs = table.labels(col);
        for (std::size_t r = 0; r < n; ++r) {
          auto k = enc.index_of(xs[r]);
          if (!k) {
            if (policy == UnknownCategory::error)
              throw LookupError("category '" + xs[r] + "' of feature '" + block.feature + "' was not seen at fit time");
            if (unknown_count) ++*unknown_count;
            continue;
          }
          out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(block.offset + *k)) = 1.0;
        }
      }
    }
    return out;
  }

  // Inverse quantile for numerical columns (rounded for integral features,
  // clamped at zero for non-negative ones); argmax per one-hot block with
  // ties resolved to the lowest vocabulary index.
  Table decode(const EncodedMatrix& m) const {
    if (!(m.layout == layout_)) throw SchemaError("encoded matrix layout does not match the encoder");
    if (!m.values.allFinite()) throw DataError("encoded matrix has non-finite entries");
    const std::size_t n = m.rows();
    Table out(schema_);
    out.reserve(n);
    std::size_t qi = 0, oi = 0;
    for (const auto& block : layout_.blocks) {
      auto col = schema_.index_of(block.feature);
      const auto& spec = schema_.features[col];
      if (block.kind == FeatureKind::numerical) {
        const auto& t = quantiles_[qi++];
        auto& dst = out.numbers(col);
        for (std::size_t r = 0; r < n; ++r) {
          double v = t.inverse(m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(block.offset)));
          if (spec.integral) v = std::round(v);
          if (spec.non_negative) v = std::max(v, 0.0);
          dst.push_back(v);
        }
      } else {
        const auto& enc = onehots_[oi++];
        auto& dst = out.labels(col);
        for (std::size_t r = 0; r < n; ++r) {
          std::size_t best = 0;
          double best_v = m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(block.offset));
          for (std::size_t k = 1; k < block.width; ++k) {
            double v = m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(block.offset + k));
            if (v > best_v) {
              best_v = v;
              best = k;
            }
          }
          dst.push_back(enc.vocabulary()[best]);
        }
      }
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    auto feats = nlohmann::json::array();
    for (const auto& f : schema_.features)
      feats.push_back({{"name", f.name}, {"kind", to_string(f.kind)}, {"unit", f.unit}, {"integral", f.integral},
                       {"non_negative", f.non_negative}});
    j["schema"] = feats;
    j["layout"] = layout_.to_json();
    auto qs = nlohmann::json::array();
    for (const auto& q : quantiles_) qs.push_back(q.to_json());
    j["quantiles"] = qs;
    auto os = nlohmann::json::array();
    for (const auto& o : onehots_) os.push_back(o.to_json());
    j["onehots"] = os;
    return j;
  }

  static TableEncoder from_json(const nlohmann::json& j) {
    TableEncoder enc;
    for (const auto& f : j.at("schema"))
      enc.schema_.features.push_back({f.at("name").get<std::string>(),
                                      f.at("kind").get<std::string>() == "numerical" ? FeatureKind::numerical
                                                                                     : FeatureKind::categorical,
                                      f.at("unit").get<std::string>(), f.at("integral").get<bool>(),
                                      f.at("non_negative").get<bool>()});
    enc.layout_ = Layout::from_json(j.at("layout"));
    for (const auto& q : j.at("quantiles")) enc.quantiles_.push_back(QuantileTransformer::from_json(q));
    for (const auto& o : j.at("onehots")) enc.onehots_.push_back(OneHotEncoder::from_json(o));
    std::size_t widths = 0;
    for (const auto& b : enc.layout_.blocks) widths += b.width;
    if (widths != enc.layout_.dim()) throw SchemaError("encoder layout widths are inconsistent");
    return enc;
  }

 private:
  Schema schema_;
  Layout layout_;
  std::vector<QuantileTransformer> quantiles_;
  std::vector<OneHotEncoder> onehots_;
};

inline EncodedMatrix encode_table(const TableEncoder& enc, const Table& table) { return enc.encode(table); }
inline Table decode_table(const TableEncoder& enc, const EncodedMatrix& m) { return enc.decode(m); }

}  // namespace wforge
