#include <gtest/gtest.h>

#include <sstream>

#include "wforge/diffusion.hpp"
#include "wforge/mock.hpp"

using namespace wforge;

namespace {

Layout mixed_layout(std::size_t numeric, std::vector<std::size_t> cats) {
  Layout l;
  std::size_t off = 0;
  for (std::size_t j = 0; j < numeric; ++j, ++off) l.blocks.push_back({"n" + std::to_string(j), FeatureKind::numerical, off, 1});
  for (std::size_t c = 0; c < cats.size(); ++c) {
    l.blocks.push_back({"c" + std::to_string(c), FeatureKind::categorical, off, cats[c]});
    off += cats[c];
  }
  return l;
}

Matrix random_rows(const Layout& l, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(l.dim()));
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (const auto& b : l.blocks) {
      if (b.kind == FeatureKind::numerical)
        x(r, static_cast<Eigen::Index>(b.offset)) = standard_normal(rng);
      else
        x(r, static_cast<Eigen::Index>(b.offset + uniform_index(rng, b.width))) = 1.0;
    }
  return x;
}

// Relative error with a floor so that near-zero gradients compare absolutely.
double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

}  // namespace

TEST(CosineSchedule, Shape) {
  auto s = make_cosine_schedule(100);
  EXPECT_EQ(s.alpha_bar[0], 1.0);
  EXPECT_GE(s.alpha_bar[1], 0.99);
  EXPECT_LT(s.alpha_bar[100], 1e-3);
  for (std::size_t t = 1; t <= 100; ++t) {
    EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
    EXPECT_GT(s.beta[t], 0.0);
    EXPECT_LE(s.beta[t], 0.999);
    EXPECT_NEAR(s.alpha_bar[t], s.alpha_bar[t - 1] * (1.0 - s.beta[t]), 1e-15);
  }
  // unclipped steps follow the closed form
  auto f = [](double u) { return std::pow(std::cos((u + 0.008) / 1.008 * std::numbers::pi / 2), 2); };
  for (std::size_t t = 1; t <= 90; ++t) EXPECT_NEAR(s.alpha_bar[t], f(t / 100.0) / f(0.0), 1e-12) << t;
  EXPECT_GE(make_cosine_schedule(50).alpha_bar[1], 0.99);
  EXPECT_THROW(make_cosine_schedule(1), DataError);
}

TEST(ForwardNumeric, LimitsAndVariance) {
  auto s = make_cosine_schedule(100);
  Vector x0(2), e(2);
  x0 << 1.5, -2.0;
  e << 0.3, 0.7;
  NoiseSchedule ident = s;
  ident.alpha_bar[5] = 1.0;
  EXPECT_TRUE(forward_diffuse_numeric(x0, 5, e, ident) == x0);
  ident.alpha_bar[5] = 0.0;
  EXPECT_TRUE(forward_diffuse_numeric(x0, 5, e, ident) == e);

  Rng rng(1);
  for (std::size_t t : {10u, 50u, 90u}) {
    double sum = 0.0, sq = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      Vector z(1);
      z(0) = standard_normal(rng);
      double v = forward_diffuse_numeric(Vector::Zero(1), t, z, s)(0);
      sum += v;
      sq += v * v;
    }
    double var = sq / n - (sum / n) * (sum / n);
    EXPECT_NEAR(var / (1.0 - s.alpha_bar[t]), 1.0, 0.02) << t;
  }
}

TEST(ForwardNumeric, FinalStepForgetsData) {
  auto s = make_cosine_schedule(100);
  Rng rng(2);
  const int n = 10000;
  std::vector<double> a(n), b(n);
  for (int i = 0; i < n; ++i) {
    Vector x0(1), z(1);
    x0(0) = standard_normal(rng);
    z(0) = standard_normal(rng);
    a[i] = x0(0);
    b[i] = forward_diffuse_numeric(x0, 100, z, s)(0);
  }
  double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (int i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  EXPECT_LT(std::abs(sab / std::sqrt(saa * sbb)), 0.05);
}

TEST(ForwardCategorical, Limits) {
  Rng rng(3);
  Vector x0 = Vector::Zero(4);
  x0(2) = 1.0;
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_categorical_marginal(x0, 1.0, rng), 2u);
  Vector one = Vector::Ones(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_categorical_marginal(one, 0.3, rng), 0u);

  const int n = 100000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < n; ++i) ++counts[sample_categorical_marginal(x0, 0.0, rng)];
  const double sd = std::sqrt(n * 0.25 * 0.75);
  for (int c : counts) EXPECT_LT(std::abs(c - n * 0.25), 3.0 * sd);
}

TEST(CategoricalPosterior, HandExample) {
  Vector u = Vector::Constant(3, 1.0 / 3.0);
  Vector p = categorical_posterior(0, u, 0.9, 0.5);
  // a = (0.9 + 0.1/3, 0.1/3, 0.1/3); b is flat, so the posterior is a itself.
  EXPECT_NEAR(p(0), 14.0 / 15.0, 1e-15);
  EXPECT_NEAR(p(1), 1.0 / 30.0, 1e-15);
  EXPECT_NEAR(p(2), 1.0 / 30.0, 1e-15);

  Vector x0(3);
  x0 << 0.2, 0.5, 0.3;
  Vector q = categorical_posterior(2, x0, 0.7, 0.4);
  double a[3] = {0.1, 0.1, 0.8}, w[3];
  double z = 0.0;
  for (int k = 0; k < 3; ++k) z += (w[k] = a[k] * (0.4 * x0(k) + 0.2));
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(q(k), w[k] / z, 1e-15);
}

TEST(CategoricalPosterior, SimplexAndIdentityCases) {
  auto s = make_cosine_schedule(100);
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    std::size_t K = 1 + uniform_index(rng, 8);
    Vector x0 = Vector::NullaryExpr(static_cast<Eigen::Index>(K), [&](Eigen::Index) { return uniform01(rng); });
    x0 /= x0.sum();
    std::size_t t = 1 + uniform_index(rng, 100);
    Vector p = categorical_posterior(uniform_index(rng, K), x0, t, s);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_GE(p.minCoeff(), 0.0);
  }
  Vector e = Vector::Zero(3);
  e(1) = 1.0;
  Vector p = categorical_posterior(0, e, 0.6, 1.0);
  EXPECT_NEAR((p - e).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  EXPECT_TRUE(categorical_posterior(2, e, 1, s) == e);
}

TEST(Denoiser, ZeroWeightsReturnBias) {
  Denoiser net(5, 4, {8}, 5);
  net.parameters().setZero();
  Vector& p = net.parameters();
  auto bias = net.bias_of(p, 1);
  for (Eigen::Index k = 0; k < 5; ++k) bias(k) = 0.1 * static_cast<double>(k);
  Matrix out = net.forward(Matrix::Random(3, 5), {1, 2, 3});
  ASSERT_EQ(out.rows(), 3);
  ASSERT_EQ(out.cols(), 5);
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index k = 0; k < 5; ++k) EXPECT_EQ(out(r, k), 0.1 * static_cast<double>(k));
  EXPECT_THROW(Denoiser(5, 3, {8}, 5), DataError);
}

TEST(Denoiser, ShapesFollowLayout) {
  auto l = mixed_layout(4, {4, 20, 10, 3, 8});
  auto m = make_diffusion_model(l, {}, 1);
  EXPECT_EQ(m.net.input_dim(), 49u + 32u);
  EXPECT_EQ(m.net.output_dim(), 49u);
  ASSERT_EQ(m.net.shapes().size(), 3u);
  EXPECT_EQ(m.net.shapes()[0].out, 256u);
  EXPECT_EQ(m.net.shapes()[1].out, 256u);
}

TEST(Denoiser, InputJacobianMatchesFiniteDifferences) {
  Denoiser net(5, 4, {8, 8}, 3);
  Rng rng(5);
  net.initialize(rng);
  Matrix x = Matrix::Random(1, 5);
  Matrix base = net.forward(x, {7});
  for (Eigen::Index j = 0; j < 5; ++j) {
    const double h = 1e-6;
    Matrix xp = x, xm = x;
    xp(0, j) += h;
    xm(0, j) -= h;
    Matrix fd = (net.forward(xp, {7}) - net.forward(xm, {7})) / (2 * h);
    Matrix small = x;
    small(0, j) += 1e-3;
    Matrix lin = base + 1e-3 * fd;
    EXPECT_LT((net.forward(small, {7}) - lin).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(LossAndGrad, MatchesFiniteDifferences) {
  for (std::size_t T : {3u, 100u}) {
    auto l = mixed_layout(2, {3});
    DiffusionConfig cfg;
    cfg.timesteps = T;
    cfg.hidden = {8};
    cfg.emb_dim = 4;
    auto m = make_diffusion_model(l, cfg, 11);
    Matrix x0 = random_rows(l, 24, 12);
    Rng rng(13);
    auto draw = draw_training_noise(m, x0, rng);
    auto lg = loss_and_grad(m, x0, draw);
    ASSERT_EQ(static_cast<std::size_t>(lg.grad.size()), m.net.parameter_count());
    double worst = 0.0;
    for (Eigen::Index i = 0; i < lg.grad.size(); ++i) {
      const double h = 1e-5, keep = m.net.parameters()(i);
      m.net.parameters()(i) = keep + h;
      double up = loss_and_grad(m, x0, draw, false).loss;
      m.net.parameters()(i) = keep - h;
      double down = loss_and_grad(m, x0, draw, false).loss;
      m.net.parameters()(i) = keep;
      worst = std::max(worst, rel_err(lg.grad(i), (up - down) / (2 * h)));
    }
    EXPECT_LT(worst, 1e-4) << "T=" << T;
  }
}

TEST(LossAndGrad, PerfectPredictionHasZeroLoss) {
  auto l = mixed_layout(2, {3, 2});
  DiffusionConfig cfg;
  cfg.hidden = {4};
  cfg.emb_dim = 2;
  auto m = make_diffusion_model(l, cfg, 1);
  m.net.parameters().setZero();
  // one training row with all-zero noise and x0 fixed through large output biases
  Matrix x0 = Matrix::Zero(1, 7);
  x0(0, 2) = 1.0;
  x0(0, 6) = 1.0;
  Rng rng(2);
  auto draw = draw_training_noise(m, x0, rng);
  draw.eps.setZero();
  auto bias = m.net.bias_of(m.net.parameters(), 1);
  bias << 0, 0, 800, 0, 0, 0, 800;
  auto lg = loss_and_grad(m, x0, draw);
  EXPECT_EQ(lg.numeric, 0.0);
  EXPECT_NEAR(lg.categorical, 0.0, 1e-12);
}

TEST(LossAndGrad, BatchOrderInvariant) {
  auto l = mixed_layout(3, {4, 2});
  auto m = make_diffusion_model(l, {.timesteps = 50, .hidden = {16, 16}, .emb_dim = 8}, 3);
  Matrix x0 = random_rows(l, 64, 4);
  Rng rng(5);
  auto draw = draw_training_noise(m, x0, rng);
  std::vector<std::size_t> perm(64);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix x0p(x0.rows(), x0.cols());
  TrainingDraw dp = draw;
  for (std::size_t i = 0; i < 64; ++i) {
    const auto I = static_cast<Eigen::Index>(i), P = static_cast<Eigen::Index>(perm[i]);
    x0p.row(I) = x0.row(P);
    dp.t[i] = draw.t[perm[i]];
    dp.eps.row(I) = draw.eps.row(P);
    dp.xt.row(I) = draw.xt.row(P);
    dp.xt_cat[2 * i] = draw.xt_cat[2 * perm[i]];
    dp.xt_cat[2 * i + 1] = draw.xt_cat[2 * perm[i] + 1];
  }
  auto a = loss_and_grad(m, x0, draw), b = loss_and_grad(m, x0p, dp);
  EXPECT_NEAR(a.loss, b.loss, 1e-12 * a.loss);
  EXPECT_LT((a.grad - b.grad).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GE(a.loss, 0.0);
}

TEST(TrainDiffusion, ZeroStepsReturnsInitialisedModel) {
  auto l = mixed_layout(2, {3});
  DiffusionConfig dc{.timesteps = 10, .hidden = {8}, .emb_dim = 4};
  EncodedMatrix data{random_rows(l, 32, 1), l};
  auto m = train_diffusion(data, dc, {.steps = 0, .batch_size = 16, .seed = 9});
  EXPECT_EQ(m.net.parameters(), make_diffusion_model(l, dc, 9).net.parameters());
  EXPECT_EQ(m.steps_run, 0u);
  EXPECT_THROW(train_diffusion(data, dc, {.steps = 1, .batch_size = 64}), DataError);
  EXPECT_THROW(train_diffusion(data, dc, {.steps = 1, .learning_rate = 0.0, .batch_size = 16}), DataError);
}

TEST(TrainDiffusion, DeterministicAndLossDecreasesOnMock) {
  auto t = generate_mock_table(MockProfile::defaults(), 4000, 3);
  auto enc = TableEncoder::fit(t);
  auto x = enc.encode(t);
  DiffusionConfig dc{.hidden = {64, 64}};
  TrainConfig tc{.steps = 400, .learning_rate = 2e-3, .batch_size = 128, .seed = 1};
  auto a = train_diffusion(x, dc, tc);
  auto b = train_diffusion(x, dc, tc);
  EXPECT_EQ(a.net.parameters(), b.net.parameters());
  ASSERT_EQ(a.loss_curve.size(), 400u);
  double head = std::accumulate(a.loss_curve.begin(), a.loss_curve.begin() + 40, 0.0);
  double tail = std::accumulate(a.loss_curve.end() - 40, a.loss_curve.end(), 0.0);
  EXPECT_LT(tail, head);
}

TEST(TrainDiffusion, OverfitsSingleRepeatedRow) {
  auto l = mixed_layout(2, {});
  Matrix x(256, 2);
  x.col(0).setConstant(0.8);
  x.col(1).setConstant(-1.3);
  auto m = train_diffusion({x, l}, {.hidden = {64, 64}}, {.steps = 3000, .learning_rate = 2e-3, .batch_size = 256, .seed = 2});
  auto s = sample_diffusion(m, 1000, 3);
  int close = 0;
  for (Eigen::Index r = 0; r < s.values.rows(); ++r)
    if (std::abs(s.values(r, 0) - 0.8) < 0.1 && std::abs(s.values(r, 1) + 1.3) < 0.1) ++close;
  EXPECT_GE(close, 950);
}

TEST(SampleDiffusion, OneHotDeterministicAndWorkerIndependent) {
  auto l = mixed_layout(2, {3, 5});
  auto m = make_diffusion_model(l, {.timesteps = 20, .hidden = {16}, .emb_dim = 4}, 7);
  setenv("WORKLOAD_FORGE_THREADS", "1", 1);
  auto a = sample_diffusion(m, 3000, 5);
  setenv("WORKLOAD_FORGE_THREADS", "3", 1);
  auto b = sample_diffusion(m, 3000, 5);
  unsetenv("WORKLOAD_FORGE_THREADS");
  EXPECT_TRUE(a.values == b.values);
  EXPECT_FALSE(a.values == sample_diffusion(m, 3000, 6).values);
  EXPECT_TRUE(a.values.allFinite());
  for (const auto& blk : l.categorical_blocks())
    for (Eigen::Index r = 0; r < a.values.rows(); ++r) {
      auto seg = a.values.row(r).segment(static_cast<Eigen::Index>(blk.offset), static_cast<Eigen::Index>(blk.width));
      EXPECT_EQ(seg.sum(), 1.0);
      EXPECT_EQ(seg.maxCoeff(), 1.0);
    }
}

// With eps_hat = 0 each reverse step is x_{t-1} = x_t / sqrt(alpha_t) + noise of
// variance beta_tilde_t, so the output variance follows that recursion from 1.
TEST(SampleDiffusion, ZeroModelFollowsVarianceRecursion) {
  auto l = mixed_layout(2, {});
  DiffusionConfig dc{.timesteps = 100, .hidden = {8}, .emb_dim = 4, .clip_x0 = 0.0};
  auto m = make_diffusion_model(l, dc, 1);
  m.net.parameters().setZero();
  const auto& s = m.schedule;
  double v = 1.0;
  for (std::size_t t = s.T; t >= 1; --t) v = v / s.alpha(t) + (t > 1 ? s.posterior_variance(t) : 0.0);
  auto x = sample_diffusion(m, 10000, 8);
  for (Eigen::Index j = 0; j < 2; ++j) {
    double mean = x.values.col(j).mean();
    double var = (x.values.col(j).array() - mean).square().mean();
    EXPECT_LT(std::abs(mean), 4.0 * std::sqrt(v / 10000.0));
    EXPECT_NEAR(var / v, 1.0, 0.05);
  }
  EXPECT_GT(v, 100.0);  // far from unit variance

  m.config.clip_x0 = kDefaultClampBound;
  auto clipped = sample_diffusion(m, 2000, 8);
  EXPECT_LE(clipped.values.cwiseAbs().maxCoeff(), kDefaultClampBound + 1e-9);
}

TEST(Checkpoint, RoundTrip) {
  auto l = mixed_layout(2, {3});
  auto m = train_diffusion({random_rows(l, 64, 1), l}, {.timesteps = 10, .hidden = {8, 6}, .emb_dim = 4},
                           {.steps = 5, .batch_size = 32, .seed = 4});
  std::stringstream s;
  write_checkpoint(s, m);
  EXPECT_EQ(s.str().substr(0, 4), "TDPM");
  auto r = read_checkpoint(s);
  EXPECT_EQ(r.net.parameters(), m.net.parameters());
  EXPECT_EQ(r.layout, m.layout);
  EXPECT_EQ(r.schedule.alpha_bar, m.schedule.alpha_bar);
  EXPECT_EQ(r.config.hidden, m.config.hidden);
  EXPECT_EQ(r.steps_run, 5u);
  EXPECT_EQ(r.final_loss, m.final_loss);
  EXPECT_TRUE(sample_diffusion(r, 50, 1).values == sample_diffusion(m, 50, 1).values);
  EXPECT_EQ(loss_sidecar(m)["loss"].size(), 5u);

  std::string bytes = s.str();
  bytes[4] = 9;  // version
  std::stringstream bad(bytes);
  EXPECT_THROW(read_checkpoint(bad), ParseError);
  std::stringstream trunc(s.str().substr(0, s.str().size() - 9));
  EXPECT_THROW(read_checkpoint(trunc), ParseError);
}
