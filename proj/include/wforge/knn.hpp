#pragma once
// Exact Euclidean nearest-neighbour search over the rows of a dense matrix.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

#include "wforge/common.hpp"

namespace wforge {

struct Neighbor {
  double sq_dist = 0.0;
  std::size_t index = 0;
  auto operator<=>(const Neighbor&) const = default;
};

// Squared distance, accumulated in column order. Every search path uses this so
// results are bit-identical to an exhaustive scan.
inline double squared_distance(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double t = a[j] - b[j];
    s += t * t;
  }
  return s;
}

inline constexpr std::size_t npos_index = static_cast<std::size_t>(-1);

// Bounded max-heap of the k best (sq_dist, index) pairs.
class NeighborHeap {
 public:
  explicit NeighborHeap(std::size_t k) : k_(k) { heap_.reserve(k + 1); }

  bool full() const { return heap_.size() >= k_; }
  double worst() const { return heap_.front().sq_dist; }

  // A cell whose lower bound is `bound` may still hold a neighbour. The slack
  // absorbs rounding in bounds assembled from partial sums.
  bool admits(double bound) const { return !full() || bound <= worst() * (1.0 + 1e-9) + 1e-300; }

  void offer(const Neighbor& c) {
    if (!full()) {
      heap_.push_back(c);
      std::push_heap(heap_.begin(), heap_.end());
    } else if (c < heap_.front()) {
      std::pop_heap(heap_.begin(), heap_.end());
      heap_.back() = c;
      std::push_heap(heap_.begin(), heap_.end());
    }
  }

  std::vector<Neighbor> sorted() && {
    std::sort_heap(heap_.begin(), heap_.end());
    return std::move(heap_);
  }

 private:
  std::size_t k_;
  std::vector<Neighbor> heap_;
};

// k-d tree over a subset of rows, splitting on the leading `split_dims` columns
// and scoring candidates on all columns.
class KdTree {
 public:
  static constexpr std::size_t kLeafSize = 16;
  static constexpr std::size_t npos = npos_index;

  KdTree() = default;
  explicit KdTree(std::shared_ptr<const Matrix> data) : KdTree(data, {}, data ? static_cast<std::size_t>(data->cols()) : 0) {}

  // Empty `rows` means all rows.
  KdTree(std::shared_ptr<const Matrix> data, std::vector<std::size_t> rows, std::size_t split_dims)
      : data_(std::move(data)), order_(std::move(rows)), split_dims_(split_dims) {
    if (!data_) throw DataError("kd-tree needs data");
    if (order_.empty()) {
      order_.resize(static_cast<std::size_t>(data_->rows()));
      std::iota(order_.begin(), order_.end(), std::size_t{0});
    }
    if (!order_.empty()) build(0, order_.size());
  }

  std::size_t rows() const { return static_cast<std::size_t>(data_->rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(data_->cols()); }
  const Matrix& data() const { return *data_; }
  const double* row(std::size_t i) const { return data_->data() + i * dim(); }

  // k nearest rows to `query`, ascending by (distance, index); `exclude` is skipped.
  std::vector<Neighbor> knn(const double* query, std::size_t k, std::size_t exclude = npos) const {
    NeighborHeap heap(k);
    if (k > 0) search(query, exclude, heap, 0.0);
    return std::move(heap).sorted();
  }

  // Squared distance to the closest row.
  double nearest_sq(const double* query) const {
    if (nodes_.empty()) throw DataError("nearest neighbour over empty reference set");
    NeighborHeap heap(1);
    search(query, npos, heap, 0.0);
    return std::move(heap).sorted().front().sq_dist;
  }

  // Offers every row that can beat the heap, given that all rows of this tree
  // lie at least `base` away in the columns the tree does not split on.
  void search(const double* q, std::size_t exclude, NeighborHeap& heap, double base) const {
    if (nodes_.empty()) return;
    std::vector<double> off(split_dims_, 0.0);
    search_node(0, q, exclude, heap, off, base);
  }

 private:
  struct Node {
    std::size_t begin, end;
    std::size_t dim = 0;
    double left_max = 0.0, right_min = 0.0;  // left values <= left_max < right_min <= right values
    std::size_t left = npos, right = npos;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    std::size_t id = nodes_.size();
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return id;
    std::size_t best_dim = 0;
    double best_spread = -1.0;
    for (std::size_t j = 0; j < split_dims_; ++j) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t i = begin; i < end; ++i) {
        double v = row(order_[i])[j];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > best_spread) {
        best_spread = hi - lo;
        best_dim = j;
      }
    }
    if (best_spread <= 0.0) return id;  // all points identical on the split columns
    // Strict partition around the median value so no value straddles the cut.
    auto first = order_.begin() + static_cast<std::ptrdiff_t>(begin), last = order_.begin() + static_cast<std::ptrdiff_t>(end);
    auto key = [&](std::size_t i) { return row(i)[best_dim]; };
    auto median = first + static_cast<std::ptrdiff_t>((end - begin) / 2);
    std::nth_element(first, median, last, [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
    const double pivot = key(*median);
    auto cut = std::partition(first, last, [&](std::size_t i) { return key(i) < pivot; });
    if (cut == first) cut = std::partition(first, last, [&](std::size_t i) { return key(i) <= pivot; });
    std::size_t mid = begin + static_cast<std::size_t>(cut - first);
    double lmax = -std::numeric_limits<double>::infinity(), rmin = std::numeric_limits<double>::infinity();
    for (auto it = first; it != cut; ++it) lmax = std::max(lmax, key(*it));
    for (auto it = cut; it != last; ++it) rmin = std::min(rmin, key(*it));
    nodes_[id].dim = best_dim;
    nodes_[id].left_max = lmax;
    nodes_[id].right_min = rmin;
    std::size_t l = build(begin, mid);
    std::size_t r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  // `off` holds the per-axis offset from the query to the current cell and `rd`
  // the resulting lower bound on the distance to any row in the cell.
  void search_node(std::size_t id, const double* q, std::size_t exclude, NeighborHeap& heap, std::vector<double>& off,
                   double rd) const {
    const Node& n = nodes_[id];
    if (n.left == npos) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        std::size_t idx = order_[i];
        if (idx != exclude) heap.offer({squared_distance(q, row(idx), dim()), idx});
      }
      return;
    }
    const double v = q[n.dim];
    const bool go_left = v <= n.left_max + (n.right_min - n.left_max) / 2.0;
    const double diff = go_left ? n.right_min - v : v - n.left_max;
    search_node(go_left ? n.left : n.right, q, exclude, heap, off, rd);
    const double old = off[n.dim];
    const double far_rd = rd - old * old + diff * diff;
    if (heap.admits(far_rd)) {
      off[n.dim] = diff;
      search_node(go_left ? n.right : n.left, q, exclude, heap, off, far_rd);
      off[n.dim] = old;
    }
  }

  std::shared_ptr<const Matrix> data_;
  std::vector<std::size_t> order_;
  std::size_t split_dims_ = 0;
  std::vector<Node> nodes_;
};

// Exact search tuned for encoded job tables: rows are grouped by identical values
// in the trailing columns, each group gets a k-d tree over the leading `head`
// columns, and groups are visited in order of their trailing distance to the
// query. When `block_widths` partitions the trailing columns into one-hot (or
// all-zero) blocks, that distance is assembled from per-block lookups. Falls
// back to one k-d tree when grouping does not pay.
class NeighborIndex {
 public:
  NeighborIndex() = default;
  NeighborIndex(std::shared_ptr<const Matrix> data, std::size_t head, std::vector<std::size_t> block_widths = {})
      : data_(std::move(data)) {
    if (!data_) throw DataError("neighbour index needs data");
    const std::size_t n = rows(), d = dim();
    head_ = std::min(head, d);
    if (head_ < d && n > 0) {
      const std::size_t limit = n / 2 + 1;
      if (std::accumulate(block_widths.begin(), block_widths.end(), std::size_t{0}) == d - head_ && build_coded(block_widths, limit))
        return;
      std::map<std::vector<double>, std::vector<std::size_t>> groups;
      for (std::size_t i = 0; i < n && groups.size() <= limit; ++i) {
        const double* r = row(i);
        groups[std::vector<double>(r + head_, r + d)].push_back(i);
      }
      if (groups.size() <= limit) {
        for (auto& [tail, members] : groups) {
          tails_.insert(tails_.end(), tail.begin(), tail.end());
          trees_.emplace_back(data_, std::move(members), head_);
        }
        return;
      }
    }
    trees_.emplace_back(data_);
  }

  std::size_t rows() const { return static_cast<std::size_t>(data_->rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(data_->cols()); }
  const Matrix& data() const { return *data_; }
  const double* row(std::size_t i) const { return data_->data() + i * dim(); }
  std::size_t groups() const { return trees_.size(); }

  std::vector<Neighbor> knn(const double* query, std::size_t k, std::size_t exclude = npos_index) const {
    NeighborHeap heap(k);
    if (k > 0) search(query, exclude, heap);
    return std::move(heap).sorted();
  }

  double nearest_sq(const double* query) const {
    if (rows() == 0) throw DataError("nearest neighbour over empty reference set");
    NeighborHeap heap(1);
    search(query, npos_index, heap);
    return std::move(heap).sorted().front().sq_dist;
  }

 private:
  // Groups rows by their code in each block (-1 for an all-zero block). Fails
  // when a block is not one-hot or there are too many groups.
  bool build_coded(const std::vector<std::size_t>& widths, std::size_t limit) {
    std::map<std::vector<std::int32_t>, std::vector<std::size_t>> groups;
    std::vector<std::int32_t> code(widths.size());
    for (std::size_t i = 0; i < rows(); ++i) {
      const double* r = row(i) + head_;
      for (std::size_t b = 0; b < widths.size(); ++b) {
        std::int32_t c = -1;
        for (std::size_t j = 0; j < widths[b]; ++j) {
          if (r[j] == 0.0) continue;
          if (r[j] != 1.0 || c >= 0) return false;
          c = static_cast<std::int32_t>(j);
        }
        code[b] = c;
        r += widths[b];
      }
      auto& members = groups[code];
      members.push_back(i);
      if (groups.size() > limit) return false;
    }
    widths_ = widths;
    for (auto& [c, members] : groups) {
      codes_.insert(codes_.end(), c.begin(), c.end());
      trees_.emplace_back(data_, std::move(members), head_);
    }
    return true;
  }

  std::vector<double> group_bases(const double* q) const {
    const std::size_t G = trees_.size();
    std::vector<double> base(G, 0.0);
    if (!widths_.empty()) {
      const std::size_t B = widths_.size();
      // term[b][j + 1]: squared distance of block b to unit vector j; slot 0 is the zero block
      std::vector<std::vector<double>> term(B);
      const double* qb = q + head_;
      for (std::size_t b = 0; b < B; ++b) {
        double norm = 0.0;
        for (std::size_t j = 0; j < widths_[b]; ++j) norm += qb[j] * qb[j];
        term[b].resize(widths_[b] + 1);
        term[b][0] = norm;
        for (std::size_t j = 0; j < widths_[b]; ++j) term[b][j + 1] = norm - 2.0 * qb[j] + 1.0;
        qb += widths_[b];
      }
      for (std::size_t g = 0; g < G; ++g) {
        const std::int32_t* c = codes_.data() + g * B;
        double s = 0.0;
        for (std::size_t b = 0; b < B; ++b) s += term[b][static_cast<std::size_t>(c[b] + 1)];
        base[g] = std::max(s, 0.0);
      }
    } else {
      const std::size_t tail = dim() - head_;
      for (std::size_t g = 0; g < G; ++g) base[g] = squared_distance(q + head_, tails_.data() + g * tail, tail);
    }
    return base;
  }

  void search(const double* q, std::size_t exclude, NeighborHeap& heap) const {
    if (trees_.size() == 1 && tails_.empty() && widths_.empty()) {
      trees_.front().search(q, exclude, heap, 0.0);
      return;
    }
    auto base = group_bases(q);
    std::vector<std::pair<double, std::size_t>> order(base.size());
    for (std::size_t g = 0; g < base.size(); ++g) order[g] = {base[g], g};
    auto later = [](const auto& a, const auto& b) { return a > b; };
    std::make_heap(order.begin(), order.end(), later);
    while (!order.empty()) {
      std::pop_heap(order.begin(), order.end(), later);
      auto [b, g] = order.back();
      order.pop_back();
      if (!heap.admits(b)) break;
      trees_[g].search(q, exclude, heap, b);
    }
  }

  std::shared_ptr<const Matrix> data_;
  std::size_t head_ = 0;
  std::vector<std::size_t> widths_;
  std::vector<std::int32_t> codes_;
  std::vector<double> tails_;
  std::vector<KdTree> trees_;
};

// Exhaustive reference implementation.
inline std::vector<Neighbor> brute_force_knn(const Matrix& data, const double* query, std::size_t k,
                                             std::size_t exclude = npos_index) {
  const auto d = static_cast<std::size_t>(data.cols());
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < static_cast<std::size_t>(data.rows()); ++i)
    if (i != exclude) all.push_back({squared_distance(query, data.data() + i * d, d), i});
  std::size_t m = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(m), all.end());
  all.resize(m);
  return all;
}

}  // namespace wforge
