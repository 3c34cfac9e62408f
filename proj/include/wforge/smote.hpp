#pragma once
// Interpolating generator: each synthetic row lies on the segment between a
// training row and one of its k nearest neighbours in encoded space.

#include <filesystem>
#include <fstream>

#include "wforge/knn.hpp"
#include "wforge/preprocess.hpp"

namespace wforge {

inline constexpr std::size_t kDefaultSmoteK = 5;
inline constexpr std::size_t kSampleChunk = 1024;

class SmoteModel {
 public:
  SmoteModel() = default;

  std::size_t k() const { return k_; }
  std::size_t rows() const { return tree_.rows(); }
  const Matrix& training() const { return tree_.data(); }
  const Layout& layout() const { return layout_; }

  std::vector<std::size_t> knn(std::size_t row_index, std::size_t k) const {
    if (row_index >= rows()) throw DataError("row index " + std::to_string(row_index) + " out of range");
    if (k >= rows()) throw DataError("k must be smaller than the number of training rows");
    std::vector<std::size_t> out;
    for (const auto& nb : tree_.knn(tree_.row(row_index), k, row_index)) out.push_back(nb.index);
    return out;
  }

  EncodedMatrix sample(std::size_t n, std::uint64_t seed) const {
    if (n == 0) throw DataError("sample size must be at least 1");
    const std::size_t d = static_cast<std::size_t>(training().cols());
    EncodedMatrix out{Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)), layout_};
    parallel_for(n, kSampleChunk, [&](std::size_t begin, std::size_t end) {
      Rng rng = substream(seed, begin / kSampleChunk);
      for (std::size_t r = begin; r < end; ++r) {
        std::size_t b = uniform_index(rng, rows());
        auto nbs = tree_.knn(tree_.row(b), k_, b);
        std::size_t nb = nbs[uniform_index(rng, nbs.size())].index;
        double lambda = uniform01(rng);
        const double* xb = tree_.row(b);
        const double* xn = tree_.row(nb);
        double* o = out.values.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) o[j] = xb[j] + lambda * (xn[j] - xb[j]);
      }
    });
    return out;
  }

  friend SmoteModel fit_smote(EncodedMatrix encoded, std::size_t k);

 private:
  std::size_t k_ = kDefaultSmoteK;
  Layout layout_;
  NeighborIndex tree_;
};

inline SmoteModel fit_smote(EncodedMatrix encoded, std::size_t k = kDefaultSmoteK) {
  if (k == 0) throw DataError("k must be positive");
  if (encoded.rows() < k + 1)
    throw DataError("SMOTE needs at least k+1 = " + std::to_string(k + 1) + " rows, got " +
                    std::to_string(encoded.rows()));
  if (!encoded.values.allFinite()) throw DataError("encoded training matrix has non-finite values");
  SmoteModel m;
  m.k_ = k;
  m.layout_ = std::move(encoded.layout);
  m.tree_ = NeighborIndex(std::make_shared<const Matrix>(std::move(encoded.values)), m.layout_.numeric_dim(),
                          m.layout_.category_sizes());
  return m;
}

// Row-major matrix file: "SMTE", u32 column count, u64 row count, then f64 values.
inline void write_matrix(std::ostream& os, const Matrix& m) {
  binio::put_magic(os, "SMTE");
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
  binio::put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
  binio::put_doubles(os, m.data(), static_cast<std::size_t>(m.size()));
}

inline Matrix read_matrix(std::istream& is) {
  binio::expect_magic(is, "SMTE");
  auto cols = binio::get<std::uint32_t>(is);
  auto rows = binio::get<std::uint64_t>(is);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  binio::get_doubles(is, m.data(), static_cast<std::size_t>(m.size()));
  return m;
}

inline void save_matrix(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  write_matrix(os, m);
  if (!os) throw IoError("write failed for " + path.string());
}

inline Matrix load_matrix(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  return read_matrix(is);
}

}  // namespace wforge
