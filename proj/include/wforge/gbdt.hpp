#pragma once
// Gradient-boosted regression trees on squared error with exact greedy splits.

#include <cmath>
#include <cstdint>
#include <numeric>

#include <nlohmann/json.hpp>

#include "wforge/common.hpp"

namespace wforge {

struct GbdtConfig {
  std::size_t iterations = 200;
  std::size_t max_depth = 10;
  double learning_rate = 1.0;
  std::size_t min_samples_leaf = 1;
  std::uint64_t seed = 0;  // fitting is deterministic; kept for config symmetry

  static GbdtConfig desk() {
    GbdtConfig c;
    c.iterations = 50;
    c.max_depth = 6;
    return c;
  }

  void validate() const {
    if (max_depth < 1) throw DataError("tree depth must be at least 1");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw DataError("learning rate must lie in (0, 1]");
    if (min_samples_leaf < 1) throw DataError("min samples per leaf must be at least 1");
  }

  nlohmann::json to_json() const {
    return {{"iterations", iterations}, {"max_depth", max_depth}, {"learning_rate", learning_rate},
            {"min_samples_leaf", min_samples_leaf}, {"seed", seed}, {"loss", "squared_error"}};
  }
};

struct RegressionTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    std::uint32_t left = 0, right = 0;
    double value = 0.0;
  };
  std::vector<Node> nodes;

  // x[feature] <= threshold goes left.
  double predict(const double* x) const {
    std::uint32_t i = 0;
    while (nodes[i].feature >= 0) i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    return nodes[i].value;
  }

  std::size_t depth(std::uint32_t i = 0) const {
    if (nodes[i].feature < 0) return 0;
    return 1 + std::max(depth(nodes[i].left), depth(nodes[i].right));
  }
};

struct GbdtModel {
  double base = 0.0;
  double learning_rate = 1.0;
  std::size_t width = 0;
  std::vector<RegressionTree> trees;
  std::vector<double> train_mse;          // after each stage; entry 0 is the base-only model
  std::vector<double> train_predictions;  // final fitted values on the training rows

  double predict_row(const double* x) const {
    double s = 0.0;
    for (const auto& t : trees) s += t.predict(x);
    return base + learning_rate * s;
  }

  std::vector<double> predict(const Matrix& x) const {
    if (static_cast<std::size_t>(x.cols()) != width)
      throw SchemaError("feature width " + std::to_string(x.cols()) + " does not match model width " + std::to_string(width));
    std::vector<double> out(static_cast<std::size_t>(x.rows()));
    parallel_for(out.size(), 4096, [&](std::size_t b, std::size_t e) {
      for (std::size_t r = b; r < e; ++r) out[r] = predict_row(x.data() + r * width);
    });
    return out;
  }

  nlohmann::json to_json() const {
    auto ts = nlohmann::json::array();
    for (const auto& t : trees) {
      auto ns = nlohmann::json::array();
      for (const auto& n : t.nodes) {
        if (n.feature < 0)
          ns.push_back({{"value", n.value}});
        else
          ns.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
      }
      ts.push_back(ns);
    }
    return {{"base", base}, {"learning_rate", learning_rate}, {"width", width}, {"trees", ts}};
  }
};

inline double mse(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != target.size() || pred.empty()) throw DataError("mse needs equal, non-empty inputs");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const GbdtConfig& cfg) : x_(x), cfg_(cfg), n_(static_cast<std::size_t>(x.rows())), p_(static_cast<std::size_t>(x.cols())) {
    presorted_.resize(p_);
    for (std::size_t f = 0; f < p_; ++f) {
      auto& o = presorted_[f];
      o.resize(n_);
      std::iota(o.begin(), o.end(), 0u);
      std::stable_sort(o.begin(), o.end(), [&](std::uint32_t a, std::uint32_t b) { return value(a, f) < value(b, f); });
    }
    goes_left_.resize(n_);
    buffer_.resize(n_);
  }

  // Fits one tree to `residual` and adds lr * leaf value to `fitted`.
  RegressionTree build(const std::vector<double>& residual, std::vector<double>& fitted) {
    order_ = presorted_;
    residual_ = &residual;
    fitted_ = &fitted;
    tree_ = RegressionTree{};
    grow(0, n_, 0);
    return std::move(tree_);
  }

 private:
  double value(std::uint32_t row, std::size_t f) const { return x_(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(f)); }

  struct Split {
    double gain = -std::numeric_limits<double>::infinity();
    int feature = -1;
    double threshold = 0.0;
    std::size_t left_count = 0;
  };

  // Gains within `tol` of the incumbent count as ties so the lowest feature and
  // threshold win regardless of summation order.
  Split best_split_for(std::size_t f, std::size_t begin, std::size_t end, double total, double tol) const {
    Split best;
    const auto& o = order_[f];
    const double n = static_cast<double>(end - begin);
    double left = 0.0;
    for (std::size_t k = begin; k + 1 < end; ++k) {
      left += (*residual_)[o[k]];
      double v = value(o[k], f), next = value(o[k + 1], f);
      if (!(v < next)) continue;
      std::size_t nl = k - begin + 1, nr = end - begin - nl;
      if (nl < cfg_.min_samples_leaf || nr < cfg_.min_samples_leaf) continue;
      double right = total - left;
      double gain = left * left / static_cast<double>(nl) + right * right / static_cast<double>(nr) - total * total / n;
      if (gain > best.gain + tol) {
        double mid = v + (next - v) / 2.0;
        best = {gain, static_cast<int>(f), mid < next ? mid : v, nl};
      }
    }
    return best;
  }

  std::uint32_t grow(std::size_t begin, std::size_t end, std::size_t depth) {
    const auto id = static_cast<std::uint32_t>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    const auto& rows = order_[0];
    double total = 0.0, sq = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t k = begin; k < end; ++k) {
      double r = (*residual_)[rows[k]];
      total += r;
      sq += r * r;
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
    Split best;
    if (depth < cfg_.max_depth && lo < hi && end - begin >= 2 * cfg_.min_samples_leaf) {
      const double tol = 1e-10 * sq;
      std::vector<Split> per(p_);
      const std::size_t grain = end - begin >= 8192 ? 1 : p_;
      parallel_for(p_, grain, [&](std::size_t b, std::size_t e) {
        for (std::size_t f = b; f < e; ++f) per[f] = best_split_for(f, begin, end, total, tol);
      });
      for (const auto& s : per)
        if (s.gain > best.gain + tol) best = s;
    }
    if (best.feature < 0) {
      double leaf = total / static_cast<double>(end - begin);
      tree_.nodes[id].value = leaf;
      for (std::size_t k = begin; k < end; ++k) (*fitted_)[rows[k]] += cfg_.learning_rate * leaf;
      return id;
    }
    const auto f = static_cast<std::size_t>(best.feature);
    for (std::size_t k = begin; k < end; ++k) {
      std::uint32_t r = order_[f][k];
      goes_left_[r] = value(r, f) <= best.threshold;
    }
    for (auto& o : order_) {
      std::size_t l = begin, b = 0;
      for (std::size_t k = begin; k < end; ++k) {
        if (goes_left_[o[k]])
          o[l++] = o[k];
        else
          buffer_[b++] = o[k];
      }
      std::copy(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(b), o.begin() + static_cast<std::ptrdiff_t>(l));
    }
    const std::size_t mid = begin + best.left_count;
    tree_.nodes[id].feature = best.feature;
    tree_.nodes[id].threshold = best.threshold;
    std::uint32_t l = grow(begin, mid, depth + 1);
    std::uint32_t r = grow(mid, end, depth + 1);
    tree_.nodes[id].left = l;
    tree_.nodes[id].right = r;
    return id;
  }

  const Matrix& x_;
  const GbdtConfig& cfg_;
  std::size_t n_, p_;
  std::vector<std::vector<std::uint32_t>> presorted_, order_;
  std::vector<std::uint8_t> goes_left_;
  std::vector<std::uint32_t> buffer_;
  const std::vector<double>* residual_ = nullptr;
  std::vector<double>* fitted_ = nullptr;
  RegressionTree tree_;
};

}  // namespace detail

inline GbdtModel fit_gbdt(const Matrix& x, const std::vector<double>& y, const GbdtConfig& cfg = {}) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(x.rows());
  if (n < 2) throw DataError("regressor needs at least 2 rows");
  if (y.size() != n) throw DataError("feature and target row counts differ");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(y[i])) throw DataError("non-finite target at row " + std::to_string(i));
  if (!x.allFinite()) throw DataError("non-finite feature value");
  if (n > std::numeric_limits<std::uint32_t>::max()) throw DataError("too many rows");

  GbdtModel m;
  m.width = static_cast<std::size_t>(x.cols());
  m.learning_rate = cfg.learning_rate;
  m.base = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  std::vector<double> fitted(n, m.base), residual(n);
  m.train_mse.push_back(mse(fitted, y));
  detail::TreeBuilder builder(x, cfg);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) residual[i] = y[i] - fitted[i];
    m.trees.push_back(builder.build(residual, fitted));
    m.train_mse.push_back(mse(fitted, y));
  }
  m.train_predictions = std::move(fitted);
  return m;
}

}  // namespace wforge
