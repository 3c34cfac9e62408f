#include <gtest/gtest.h>

#include <sstream>

#include "wforge/mock.hpp"
#include "wforge/preprocess.hpp"
#include "wforge/smote.hpp"

using namespace wforge;

namespace {

EncodedMatrix raw(Matrix m) {
  Layout l;
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    l.blocks.push_back({"x" + std::to_string(j), FeatureKind::numerical, static_cast<std::size_t>(j), 1});
  return {std::move(m), l};
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, bool lattice = false) {
  Rng rng(seed);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = lattice ? static_cast<double>(uniform_index(rng, 3)) : standard_normal(rng);
  return m;
}

}  // namespace

TEST(KdTree, MatchesExhaustiveSearch) {
  for (bool lattice : {false, true}) {  // lattice data has many exact distance ties
    auto m = std::make_shared<const Matrix>(random_matrix(200, 10, 3, lattice));
    KdTree tree(m);
    for (std::size_t q = 0; q < 200; ++q) {
      for (std::size_t k : {1u, 5u, 17u}) {
        auto got = tree.knn(tree.row(q), k, q);
        auto want = brute_force_knn(*m, tree.row(q), k, q);
        ASSERT_EQ(got, want) << "q=" << q << " k=" << k << " lattice=" << lattice;
      }
      Eigen::VectorXd probe = Eigen::VectorXd::NullaryExpr(10, [&](Eigen::Index j) { return 0.37 * static_cast<double>(j) - 1.0; });
      probe(0) += static_cast<double>(q) * 0.01;
      EXPECT_EQ(tree.nearest_sq(probe.data()), brute_force_knn(*m, probe.data(), 1)[0].sq_dist);
    }
  }
}

TEST(KdTree, DuplicatesAndEmpty) {
  Matrix m(4, 2);
  m << 1, 1, 1, 1, 1, 1, 1, 1;
  KdTree tree(std::make_shared<const Matrix>(m));
  auto nb = tree.knn(tree.row(2), 3, 2);
  ASSERT_EQ(nb.size(), 3u);
  EXPECT_EQ(nb[0].index, 0u);
  EXPECT_EQ(nb[1].index, 1u);
  EXPECT_EQ(nb[2].index, 3u);
  KdTree empty(std::make_shared<const Matrix>(Matrix(0, 2)));
  EXPECT_TRUE(empty.knn(m.data(), 3).empty());
  EXPECT_THROW(empty.nearest_sq(m.data()), DataError);
}

void expect_index_matches(const NeighborIndex& index, const Matrix& m, const Matrix& probes) {
  for (std::size_t q = 0; q < static_cast<std::size_t>(m.rows()); q += 13)
    for (std::size_t k : {1u, 5u, 17u})
      ASSERT_EQ(index.knn(index.row(q), k, q), brute_force_knn(m, index.row(q), k, q)) << "q=" << q << " k=" << k;
  for (Eigen::Index p = 0; p < probes.rows(); ++p) {
    Eigen::VectorXd probe = probes.row(p).transpose();
    EXPECT_EQ(index.nearest_sq(probe.data()), brute_force_knn(m, probe.data(), 1)[0].sq_dist);
    ASSERT_EQ(index.knn(probe.data(), 4), brute_force_knn(m, probe.data(), 4));
  }
}

TEST(NeighborIndex, OneHotGroupsMatchExhaustiveSearch) {
  auto t = generate_mock_table(MockProfile::defaults(), 8000, 21);
  auto enc = TableEncoder::fit(t);
  auto x = enc.encode(t);
  auto data = std::make_shared<const Matrix>(x.values);
  NeighborIndex index(data, x.layout.numeric_dim(), x.layout.category_sizes());
  EXPECT_GT(index.groups(), 1u);
  EXPECT_LT(index.groups(), 8000u / 2);
  // Probes: interpolated rows (fractional blocks), exact rows, and a zero block.
  Matrix probes(40, x.values.cols());
  for (Eigen::Index p = 0; p < 40; ++p) probes.row(p) = 0.3 * x.values.row(p) + 0.7 * x.values.row(100 + p);
  probes.row(0) = x.values.row(5);
  probes.row(1).tail(4).setZero();
  expect_index_matches(index, *data, probes);
}

TEST(NeighborIndex, RawTailGroupsAndFallback) {
  Rng rng(22);
  Matrix m(400, 6);
  for (Eigen::Index i = 0; i < 400; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) m(i, j) = std::round(standard_normal(rng) * 2.0) / 2.0;
    for (Eigen::Index j = 3; j < 6; ++j) m(i, j) = 0.5 * static_cast<double>(uniform_index(rng, 2));
  }
  auto data = std::make_shared<const Matrix>(m);
  Matrix probes = random_matrix(20, 6, 23);
  NeighborIndex raw_tail(data, 3);
  EXPECT_EQ(raw_tail.groups(), 8u);
  expect_index_matches(raw_tail, m, probes);
  NeighborIndex not_one_hot(data, 3, {1, 2});
  EXPECT_EQ(not_one_hot.groups(), 8u);
  expect_index_matches(not_one_hot, m, probes);
  auto dense = std::make_shared<const Matrix>(random_matrix(300, 5, 24));
  NeighborIndex single(dense, 2);  // 300 distinct tails
  EXPECT_EQ(single.groups(), 1u);
  expect_index_matches(single, *dense, random_matrix(10, 5, 25));
}

TEST(FitSmote, RowCountBoundary) {
  EXPECT_NO_THROW(fit_smote(raw(random_matrix(6, 2, 1)), 5));
  EXPECT_THROW(fit_smote(raw(random_matrix(5, 2, 1)), 5), DataError);
  EXPECT_THROW(fit_smote(raw(random_matrix(5, 2, 1)), 0), DataError);
}

TEST(SmoteKnn, LineExample) {
  Matrix m(3, 1);
  m << 0, 1, 3;
  auto model = fit_smote(raw(m), 2);
  EXPECT_EQ(model.knn(0, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_THROW(model.knn(3, 1), DataError);
}

TEST(SmoteKnn, ExactDuplicateIsFirstNeighbour) {
  Matrix m = random_matrix(50, 4, 2);
  m.row(37) = m.row(11);
  auto model = fit_smote(raw(m), 5);
  EXPECT_EQ(model.knn(11, 5).front(), 37u);
  EXPECT_EQ(model.knn(37, 5).front(), 11u);
}

TEST(SmoteKnn, DeterministicNeighbourSets) {
  auto a = fit_smote(raw(random_matrix(300, 6, 4)), 5);
  auto b = fit_smote(raw(random_matrix(300, 6, 4)), 5);
  for (std::size_t i = 0; i < 300; ++i) EXPECT_EQ(a.knn(i, 5), b.knn(i, 5));
}

TEST(SmoteSample, IdenticalRowsReproduced) {
  Matrix m(2, 3);
  m << 1.5, -2, 7, 1.5, -2, 7;
  auto s = fit_smote(raw(m), 1).sample(100, 1);
  for (Eigen::Index i = 0; i < 100; ++i) EXPECT_TRUE(s.values.row(i) == m.row(0));
}

TEST(SmoteSample, StaysOnSegment) {
  Matrix m(2, 3);
  m << 0, 0, 0, 1, 2, -3;
  auto s = fit_smote(raw(m), 1).sample(1000, 9);
  Eigen::RowVectorXd dir = m.row(1) - m.row(0);
  for (Eigen::Index i = 0; i < s.values.rows(); ++i) {
    Eigen::RowVectorXd v = s.values.row(i) - m.row(0);
    double t = v.dot(dir) / dir.squaredNorm();
    EXPECT_GE(t, 0.0);
    EXPECT_LE(t, 1.0);
    EXPECT_LT((v - t * dir).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SmoteSample, CategoricalBlocksSumToOneAndColumnsStayInRange) {
  auto t = generate_mock_table(MockProfile::defaults(), 3000, 5);
  auto enc = TableEncoder::fit(t);
  auto x = enc.encode(t);
  Eigen::RowVectorXd lo = x.values.colwise().minCoeff(), hi = x.values.colwise().maxCoeff();
  auto s = fit_smote(x).sample(2000, 17);
  for (const auto& b : enc.layout().categorical_blocks())
    for (Eigen::Index i = 0; i < s.values.rows(); ++i)
      EXPECT_NEAR(s.values.row(i).segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.width)).sum(),
                  1.0, 1e-12);
  for (Eigen::Index j = 0; j < s.values.cols(); ++j) {
    EXPECT_GE(s.values.col(j).minCoeff(), lo(j));
    EXPECT_LE(s.values.col(j).maxCoeff(), hi(j));
  }
  auto decoded = enc.decode(s);
  EXPECT_EQ(decoded.rows(), 2000u);
}

TEST(SmoteSample, DeterministicAcrossWorkerCounts) {
  auto model = fit_smote(raw(random_matrix(500, 5, 6)), 5);
  setenv("WORKLOAD_FORGE_THREADS", "1", 1);
  auto a = model.sample(5000, 3);
  setenv("WORKLOAD_FORGE_THREADS", "4", 1);
  auto b = model.sample(5000, 3);
  unsetenv("WORKLOAD_FORGE_THREADS");
  EXPECT_TRUE(a.values == b.values);
  EXPECT_FALSE(a.values == model.sample(5000, 4).values);
  EXPECT_THROW(model.sample(0, 1), DataError);
}

TEST(MatrixFile, RoundTripAndHeader) {
  Matrix m = random_matrix(7, 3, 8);
  std::stringstream s;
  write_matrix(s, m);
  EXPECT_EQ(s.str().size(), 16u + 7u * 3u * 8u);
  EXPECT_EQ(s.str().substr(0, 4), "SMTE");
  EXPECT_TRUE(read_matrix(s) == m);
  std::stringstream bad("XXXX0000000000000");
  EXPECT_THROW(read_matrix(bad), ParseError);
  std::string truncated = [&] {
    std::stringstream t;
    write_matrix(t, m);
    return t.str().substr(0, 40);
  }();
  std::stringstream ts(truncated);
  EXPECT_THROW(read_matrix(ts), ParseError);
}
