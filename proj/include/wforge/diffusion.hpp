#pragma once
// Mixed-type denoising diffusion: Gaussian chain over the numeric columns,
// uniform-mixing multinomial chain over each one-hot block, one shared MLP.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>

#include <nlohmann/json.hpp>

#include "wforge/preprocess.hpp"

namespace wforge {

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

struct NoiseSchedule {
  std::size_t T = 0;
  double offset = 0.008;
  std::vector<double> beta;       // beta[t], t = 1..T; beta[0] unused
  std::vector<double> alpha_bar;  // alpha_bar[t], t = 0..T; alpha_bar[0] = 1

  double alpha(std::size_t t) const { return 1.0 - beta[t]; }
  // Variance of q(x_{t-1} | x_t, x_0).
  double posterior_variance(std::size_t t) const {
    return beta[t] * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]);
  }
};

inline NoiseSchedule make_cosine_schedule(std::size_t T, double offset = 0.008) {
  if (T < 2) throw DataError("diffusion needs at least 2 timesteps");
  auto f = [&](double u) {
    double c = std::cos((u + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
    return c * c;
  };
  NoiseSchedule s;
  s.T = T;
  s.offset = offset;
  s.beta.assign(T + 1, 0.0);
  s.alpha_bar.assign(T + 1, 1.0);
  double prev = 1.0;
  for (std::size_t t = 1; t <= T; ++t) {
    double ab = f(static_cast<double>(t) / static_cast<double>(T)) / f(0.0);
    s.beta[t] = std::clamp(1.0 - ab / prev, 1e-8, 0.999);
    prev = ab;
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Forward processes and the categorical posterior
// ---------------------------------------------------------------------------

inline Vector forward_diffuse_numeric(const Vector& x0, std::size_t t, const Vector& noise, const NoiseSchedule& s) {
  return std::sqrt(s.alpha_bar[t]) * x0 + std::sqrt(1.0 - s.alpha_bar[t]) * noise;
}

inline std::size_t sample_categorical(const double* probs, std::size_t K, Rng& rng) {
  double u = uniform01(rng), acc = 0.0;
  for (std::size_t k = 0; k + 1 < K; ++k) {
    acc += probs[k];
    if (u < acc) return k;
  }
  return K - 1;
}

// Draw from Cat(alpha_bar * x0 + (1 - alpha_bar) / K).
inline std::size_t sample_categorical_marginal(const Vector& x0, double alpha_bar, Rng& rng) {
  const auto K = static_cast<std::size_t>(x0.size());
  Vector p = alpha_bar * x0 + Vector::Constant(x0.size(), (1.0 - alpha_bar) / static_cast<double>(K));
  return sample_categorical(p.data(), K, rng);
}

inline std::size_t forward_diffuse_categorical(const Vector& x0, std::size_t t, Rng& rng, const NoiseSchedule& s) {
  return sample_categorical_marginal(x0, s.alpha_bar[t], rng);
}

// q(x_{t-1} | x_t = e_xt, x_0 ~ x0_probs) with explicit alpha_t and alpha_bar_{t-1}.
inline Vector categorical_posterior(std::size_t xt, const Vector& x0_probs, double alpha_t, double alpha_bar_prev) {
  const auto K = static_cast<double>(x0_probs.size());
  Vector a = Vector::Constant(x0_probs.size(), (1.0 - alpha_t) / K);
  a(static_cast<Eigen::Index>(xt)) += alpha_t;
  Vector q = a.cwiseProduct(alpha_bar_prev * x0_probs + Vector::Constant(x0_probs.size(), (1.0 - alpha_bar_prev) / K));
  double z = q.sum();
  if (!(z > 0.0)) throw DataError("categorical posterior normaliser is zero");
  return q / z;
}

inline Vector categorical_posterior(std::size_t xt, const Vector& x0_probs, std::size_t t, const NoiseSchedule& s) {
  if (t <= 1) return x0_probs;
  return categorical_posterior(xt, x0_probs, s.alpha(t), s.alpha_bar[t - 1]);
}

// ---------------------------------------------------------------------------
// Denoiser
// ---------------------------------------------------------------------------

inline Vector timestep_embedding(double t, std::size_t dim) {
  Vector e(static_cast<Eigen::Index>(dim));
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    e(static_cast<Eigen::Index>(i)) = std::cos(t * freq);
    e(static_cast<Eigen::Index>(half + i)) = std::sin(t * freq);
  }
  return e;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// MLP on [x_t, embed(t)] with SiLU between layers and a linear output.
class Denoiser {
 public:
  struct LayerShape {
    std::size_t in, out;
    bool operator==(const LayerShape&) const = default;
  };

  Denoiser() = default;
  Denoiser(std::size_t data_dim, std::size_t emb_dim, const std::vector<std::size_t>& hidden, std::size_t out_dim)
      : data_dim_(data_dim), emb_dim_(emb_dim) {
    if (emb_dim % 2) throw DataError("timestep embedding dimension must be even");
    std::size_t in = data_dim + emb_dim;
    for (std::size_t h : hidden) {
      shapes_.push_back({in, h});
      in = h;
    }
    shapes_.push_back({in, out_dim});
    std::size_t total = 0;
    for (const auto& s : shapes_) {
      offsets_.push_back(total);
      total += s.in * s.out + s.out;
    }
    params_ = Vector::Zero(static_cast<Eigen::Index>(total));
  }

  std::size_t data_dim() const { return data_dim_; }
  std::size_t emb_dim() const { return emb_dim_; }
  std::size_t input_dim() const { return data_dim_ + emb_dim_; }
  std::size_t output_dim() const { return shapes_.back().out; }
  const std::vector<LayerShape>& shapes() const { return shapes_; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }
  Vector& parameters() { return params_; }
  const Vector& parameters() const { return params_; }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void initialize(Rng& rng) {
    for (std::size_t l = 0; l < shapes_.size(); ++l) {
      double bound = 1.0 / std::sqrt(static_cast<double>(shapes_[l].in));
      std::size_t count = shapes_[l].in * shapes_[l].out + shapes_[l].out;
      for (std::size_t i = 0; i < count; ++i)
        params_(static_cast<Eigen::Index>(offsets_[l] + i)) = (2.0 * uniform01(rng) - 1.0) * bound;
    }
  }

  Eigen::Map<const Matrix> weight(std::size_t l) const {
    return {params_.data() + offsets_[l], static_cast<Eigen::Index>(shapes_[l].in),
            static_cast<Eigen::Index>(shapes_[l].out)};
  }
  Eigen::Map<const Eigen::RowVectorXd> bias(std::size_t l) const {
    return {params_.data() + offsets_[l] + shapes_[l].in * shapes_[l].out, static_cast<Eigen::Index>(shapes_[l].out)};
  }
  Eigen::Map<Matrix> weight_of(Vector& flat, std::size_t l) const {
    return {flat.data() + offsets_[l], static_cast<Eigen::Index>(shapes_[l].in), static_cast<Eigen::Index>(shapes_[l].out)};
  }
  Eigen::Map<Eigen::RowVectorXd> bias_of(Vector& flat, std::size_t l) const {
    return {flat.data() + offsets_[l] + shapes_[l].in * shapes_[l].out, static_cast<Eigen::Index>(shapes_[l].out)};
  }

  struct Cache {
    std::vector<Matrix> pre;   // pre-activations per layer
    std::vector<Matrix> post;  // inputs to each layer (post[0] is the network input)
  };

  // Rows of `x` paired with per-row timesteps.
  Matrix assemble_input(const Matrix& x, const std::vector<double>& t) const {
    Matrix in(x.rows(), static_cast<Eigen::Index>(input_dim()));
    in.leftCols(x.cols()) = x;
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      in.row(r).tail(static_cast<Eigen::Index>(emb_dim_)) = timestep_embedding(t[static_cast<std::size_t>(r)], emb_dim_).transpose();
    return in;
  }

  Matrix forward(const Matrix& x, const std::vector<double>& t, Cache* cache = nullptr) const {
    if (static_cast<std::size_t>(x.cols()) != data_dim_) throw SchemaError("denoiser input width mismatch");
    Matrix a = assemble_input(x, t);
    if (cache) {
      cache->pre.clear();
      cache->post.clear();
    }
    for (std::size_t l = 0; l < shapes_.size(); ++l) {
      Matrix z = a * weight(l);
      z.rowwise() += bias(l);
      if (cache) {
        cache->post.push_back(a);
        cache->pre.push_back(z);
      }
      if (l + 1 == shapes_.size()) return z;
      a = z.unaryExpr([](double v) { return v * sigmoid(v); });
    }
    return a;
  }

  // Gradient of the loss w.r.t. every parameter given dL/d(output).
  Vector backward(const Cache& cache, Matrix d_out) const {
    Vector grad = Vector::Zero(params_.size());
    Matrix dz = std::move(d_out);
    for (std::size_t l = shapes_.size(); l-- > 0;) {
      weight_of(grad, l).noalias() = cache.post[l].transpose() * dz;
      bias_of(grad, l) = dz.colwise().sum();
      if (l == 0) break;
      Matrix da = dz * weight(l).transpose();
      const Matrix& z = cache.pre[l - 1];
      dz = da.cwiseProduct(z.unaryExpr([](double v) {
        double s = sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      }));
    }
    return grad;
  }

 private:
  std::size_t data_dim_ = 0, emb_dim_ = 0;
  std::vector<LayerShape> shapes_;
  std::vector<std::size_t> offsets_;
  Vector params_;
};

// ---------------------------------------------------------------------------
// Model, loss, training
// ---------------------------------------------------------------------------

struct DiffusionConfig {
  std::size_t timesteps = 100;
  std::vector<std::size_t> hidden = {256, 256};
  std::size_t emb_dim = 32;
  bool average_categorical = true;  // weight the categorical KL sum by 1/c
  double clip_x0 = kDefaultClampBound;  // bound on predicted x0 while sampling; 0 disables

  nlohmann::json to_json() const {
    return {{"timesteps", timesteps}, {"hidden", hidden}, {"emb_dim", emb_dim},
            {"average_categorical", average_categorical}, {"clip_x0", clip_x0}};
  }
};

struct TrainConfig {
  std::size_t steps = 5000;
  double learning_rate = 2e-4;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  nlohmann::json to_json() const {
    return {{"steps", steps}, {"learning_rate", learning_rate}, {"batch_size", batch_size}, {"seed", seed},
            {"lr_schedule", "cosine"}};
  }
};

struct DiffusionModel {
  NoiseSchedule schedule;
  Denoiser net;
  Layout layout;
  DiffusionConfig config;
  std::size_t steps_run = 0;
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> loss_curve;

  std::size_t numeric_dim() const { return layout.numeric_dim(); }
  std::vector<Block> categorical_blocks() const { return layout.categorical_blocks(); }
};

inline DiffusionModel make_diffusion_model(const Layout& layout, const DiffusionConfig& cfg, std::uint64_t seed) {
  DiffusionModel m;
  m.schedule = make_cosine_schedule(cfg.timesteps);
  m.net = Denoiser(layout.dim(), cfg.emb_dim, cfg.hidden, layout.dim());
  m.layout = layout;
  m.config = cfg;
  Rng rng = substream(seed, 0x1417);
  m.net.initialize(rng);
  return m;
}

// Randomness of one training batch: per-row timestep, numeric noise, noisy categories.
struct TrainingDraw {
  std::vector<std::size_t> t;
  Matrix eps;                       // rows x numeric_dim
  std::vector<std::size_t> xt_cat;  // rows x categorical features, row-major
  Matrix xt;                        // rows x encoded dim
};

inline std::size_t argmax(const double* v, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < n; ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

inline TrainingDraw draw_training_noise(const DiffusionModel& m, const Matrix& x0, Rng& rng) {
  const auto B = static_cast<std::size_t>(x0.rows());
  const std::size_t nn = m.numeric_dim();
  const auto blocks = m.categorical_blocks();
  TrainingDraw d;
  d.t.resize(B);
  d.eps.resize(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(nn));
  d.xt_cat.resize(B * blocks.size());
  d.xt = Matrix::Zero(x0.rows(), x0.cols());
  for (std::size_t r = 0; r < B; ++r) {
    const auto R = static_cast<Eigen::Index>(r);
    std::size_t t = 1 + uniform_index(rng, m.schedule.T);
    d.t[r] = t;
    double sa = std::sqrt(m.schedule.alpha_bar[t]), sn = std::sqrt(1.0 - m.schedule.alpha_bar[t]);
    for (std::size_t j = 0; j < nn; ++j) {
      const auto J = static_cast<Eigen::Index>(j);
      double e = standard_normal(rng);
      d.eps(R, J) = e;
      d.xt(R, J) = sa * x0(R, J) + sn * e;
    }
    for (std::size_t c = 0; c < blocks.size(); ++c) {
      const auto& b = blocks[c];
      Vector onehot = x0.row(R).segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.width)).transpose();
      std::size_t k = forward_diffuse_categorical(onehot, t, rng, m.schedule);
      d.xt_cat[r * blocks.size() + c] = k;
      d.xt(R, static_cast<Eigen::Index>(b.offset + k)) = 1.0;
    }
  }
  return d;
}

struct LossGrad {
  double loss = 0.0, numeric = 0.0, categorical = 0.0;
  Vector grad;
};

inline double log_sum_exp(const Vector& w) {
  double mx = w.maxCoeff();
  return mx + std::log((w.array() - mx).exp().sum());
}

inline Vector softmax(const Vector& l) {
  Vector e = (l.array() - l.maxCoeff()).exp();
  return e / e.sum();
}

// Numeric MSE on predicted noise plus weighted KL between categorical posteriors
// under the true x0 and under softmax(logits). Gradients by backpropagation.
inline LossGrad loss_and_grad(const DiffusionModel& m, const Matrix& x0, const TrainingDraw& d, bool want_grad = true) {
  const auto B = static_cast<std::size_t>(x0.rows());
  if (B == 0) throw DataError("empty training batch");
  const std::size_t nn = m.numeric_dim();
  const auto blocks = m.categorical_blocks();
  const double cat_weight = blocks.empty() ? 0.0 : (m.config.average_categorical ? 1.0 / static_cast<double>(blocks.size()) : 1.0);
  const auto& s = m.schedule;

  std::vector<double> tt(d.t.begin(), d.t.end());
  Denoiser::Cache cache;
  Matrix out = m.net.forward(d.xt, tt, want_grad ? &cache : nullptr);
  Matrix d_out = Matrix::Zero(out.rows(), out.cols());
  LossGrad res;

  if (nn > 0) {
    Matrix diff = out.leftCols(static_cast<Eigen::Index>(nn)) - d.eps;
    const double scale = 1.0 / static_cast<double>(B * nn);
    res.numeric = diff.squaredNorm() * scale;
    d_out.leftCols(static_cast<Eigen::Index>(nn)) = 2.0 * scale * diff;
  }

  for (std::size_t r = 0; r < B; ++r) {
    const auto R = static_cast<Eigen::Index>(r);
    const std::size_t t = d.t[r];
    for (std::size_t c = 0; c < blocks.size(); ++c) {
      const auto& b = blocks[c];
      const auto off = static_cast<Eigen::Index>(b.offset), K = static_cast<Eigen::Index>(b.width);
      Vector logits = out.row(R).segment(off, K).transpose();
      Vector x0c = x0.row(R).segment(off, K).transpose();
      Vector sm = softmax(logits);
      Vector g_logits(K);
      double kl = 0.0;
      if (t <= 1) {
        // posterior is x0 itself: KL reduces to cross-entropy against the true class
        Vector log_s = logits.array() - log_sum_exp(logits);
        for (Eigen::Index k = 0; k < K; ++k)
          if (x0c(k) > 0.0) kl += x0c(k) * (std::log(x0c(k)) - log_s(k));
        g_logits = sm - x0c;
      } else {
        const double at = s.alpha(t), abp = s.alpha_bar[t - 1];
        const double c0 = (1.0 - abp) / static_cast<double>(K);
        Vector log_a = Vector::Constant(K, std::log((1.0 - at) / static_cast<double>(K)));
        log_a(static_cast<Eigen::Index>(d.xt_cat[r * blocks.size() + c])) = std::log(at + (1.0 - at) / static_cast<double>(K));
        Vector b_true = abp * x0c.array() + c0;
        Vector b_pred = abp * sm.array() + c0;
        Vector w_true = log_a + b_true.array().log().matrix();
        Vector w_pred = log_a + b_pred.array().log().matrix();
        Vector log_p = w_true.array() - log_sum_exp(w_true);
        Vector log_q = w_pred.array() - log_sum_exp(w_pred);
        Vector p = log_p.array().exp(), q = log_q.array().exp();
        kl = (p.array() * (log_p - log_q).array()).sum();
        Vector g = (q - p).array() * (abp * sm.array() / b_pred.array());
        g_logits = g - sm * g.sum();
      }
      res.categorical += cat_weight * kl / static_cast<double>(B);
      d_out.row(R).segment(off, K) = (cat_weight / static_cast<double>(B)) * g_logits.transpose();
    }
  }
  res.loss = res.numeric + res.categorical;
  if (!std::isfinite(res.loss)) {
    std::size_t bad = 0;
    for (std::size_t r = 0; r < B; ++r)
      if (!out.row(static_cast<Eigen::Index>(r)).allFinite()) {
        bad = r;
        break;
      }
    throw TrainingDivergedError("non-finite loss (batch row " + std::to_string(bad) + ", t=" + std::to_string(d.t[bad]) + ")");
  }
  if (want_grad) res.grad = m.net.backward(cache, std::move(d_out));
  return res;
}

// Adam with cosine-decayed learning rate. steps == 0 returns the initialised model.
inline DiffusionModel train_diffusion(const EncodedMatrix& data, const DiffusionConfig& dcfg, const TrainConfig& cfg,
                                      const std::function<void(std::size_t, double)>& progress = {}) {
  const auto n = data.rows();
  if (cfg.batch_size == 0) throw DataError("batch size must be positive");
  if (n < cfg.batch_size)
    throw DataError("training needs at least batch_size = " + std::to_string(cfg.batch_size) + " rows, got " + std::to_string(n));
  if (!(cfg.learning_rate > 0.0)) throw DataError("learning rate must be positive");
  if (!data.values.allFinite()) throw DataError("encoded training matrix has non-finite values");

  DiffusionModel m = make_diffusion_model(data.layout, dcfg, cfg.seed);
  Rng rng = substream(cfg.seed, 0x7EA1);
  const auto P = m.net.parameters().size();
  Vector mom = Vector::Zero(P), var = Vector::Zero(P);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::size_t cursor = n;
  Matrix batch(static_cast<Eigen::Index>(cfg.batch_size), data.values.cols());
  m.loss_curve.reserve(cfg.steps);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t r = 0; r < cfg.batch_size; ++r) {
      if (cursor == n) {
        std::shuffle(perm.begin(), perm.end(), rng);
        cursor = 0;
      }
      batch.row(static_cast<Eigen::Index>(r)) = data.values.row(static_cast<Eigen::Index>(perm[cursor++]));
    }
    TrainingDraw draw = draw_training_noise(m, batch, rng);
    LossGrad lg;
    try {
      lg = loss_and_grad(m, batch, draw);
    } catch (const TrainingDivergedError& e) {
      throw TrainingDivergedError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    const double lr = cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(cfg.steps)));
    const double k = static_cast<double>(step + 1);
    mom = cfg.beta1 * mom + (1.0 - cfg.beta1) * lg.grad;
    var = cfg.beta2 * var + (1.0 - cfg.beta2) * lg.grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg.beta1, k), c2 = 1.0 - std::pow(cfg.beta2, k);
    m.net.parameters().array() -= lr * (mom.array() / c1) / ((var.array() / c2).sqrt() + cfg.adam_eps);
    m.loss_curve.push_back(lg.loss);
    if (progress) progress(step, lg.loss);
  }
  m.steps_run = cfg.steps;
  if (!m.loss_curve.empty()) m.final_loss = m.loss_curve.back();
  return m;
}

// ---------------------------------------------------------------------------
// Ancestral sampling
// ---------------------------------------------------------------------------

inline EncodedMatrix sample_diffusion(const DiffusionModel& m, std::size_t n, std::uint64_t seed,
                                      std::size_t chunk = 1024) {
  if (n == 0) throw DataError("sample size must be at least 1");
  const std::size_t d = m.layout.dim(), nn = m.numeric_dim();
  const auto blocks = m.categorical_blocks();
  const auto& s = m.schedule;
  EncodedMatrix out{Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)), m.layout};

  parallel_for(n, chunk, [&](std::size_t begin, std::size_t end) {
    Rng rng = substream(seed, begin / chunk);
    const auto rows = static_cast<Eigen::Index>(end - begin);
    Matrix x = Matrix::Zero(rows, static_cast<Eigen::Index>(d));
    std::vector<std::size_t> cat(static_cast<std::size_t>(rows) * blocks.size());
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < nn; ++j) x(r, static_cast<Eigen::Index>(j)) = standard_normal(rng);
      for (std::size_t c = 0; c < blocks.size(); ++c) {
        std::size_t k = uniform_index(rng, blocks[c].width);
        cat[static_cast<std::size_t>(r) * blocks.size() + c] = k;
        x(r, static_cast<Eigen::Index>(blocks[c].offset + k)) = 1.0;
      }
    }
    for (std::size_t t = s.T; t >= 1; --t) {
      std::vector<double> tt(static_cast<std::size_t>(rows), static_cast<double>(t));
      Matrix pred = m.net.forward(x, tt);
      const double ab = s.alpha_bar[t], abp = s.alpha_bar[t - 1], bt = s.beta[t];
      const double coef_x0 = bt * std::sqrt(abp) / (1.0 - ab);
      const double coef_xt = std::sqrt(s.alpha(t)) * (1.0 - abp) / (1.0 - ab);
      const double sd = t > 1 ? std::sqrt(s.posterior_variance(t)) : 0.0;
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < nn; ++j) {
          const auto J = static_cast<Eigen::Index>(j);
          double x0_hat = (x(r, J) - std::sqrt(1.0 - ab) * pred(r, J)) / std::sqrt(ab);
          if (m.config.clip_x0 > 0.0) x0_hat = std::clamp(x0_hat, -m.config.clip_x0, m.config.clip_x0);
          double mean = coef_x0 * x0_hat + coef_xt * x(r, J);
          x(r, J) = t > 1 ? mean + sd * standard_normal(rng) : mean;
        }
        for (std::size_t c = 0; c < blocks.size(); ++c) {
          const auto& b = blocks[c];
          const auto off = static_cast<Eigen::Index>(b.offset), K = static_cast<Eigen::Index>(b.width);
          std::size_t& k = cat[static_cast<std::size_t>(r) * blocks.size() + c];
          Vector post = categorical_posterior(k, softmax(pred.row(r).segment(off, K).transpose()), t, s);
          x.row(r).segment(off, K).setZero();
          k = sample_categorical(post.data(), b.width, rng);
          x(r, off + static_cast<Eigen::Index>(k)) = 1.0;
        }
      }
    }
    out.values.middleRows(static_cast<Eigen::Index>(begin), rows) = x;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: "TDPM", u32 version, u64 layout fingerprint, schedule, config,
// layout JSON, layer shapes, f64 parameters. Loss curve goes to a JSON sidecar.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const DiffusionModel& m) {
  binio::put_magic(os, "TDPM");
  binio::put<std::uint32_t>(os, kCheckpointVersion);
  binio::put<std::uint64_t>(os, m.layout.fingerprint());
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.schedule.T));
  binio::put<double>(os, m.schedule.offset);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.config.emb_dim));
  binio::put<std::uint8_t>(os, m.config.average_categorical ? 1 : 0);
  binio::put<double>(os, m.config.clip_x0);
  binio::put<std::uint64_t>(os, m.steps_run);
  binio::put<double>(os, m.final_loss);
  std::string layout = m.layout.to_json().dump();
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(layout.size()));
  os.write(layout.data(), static_cast<std::streamsize>(layout.size()));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.net.shapes().size()));
  for (const auto& sh : m.net.shapes()) {
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(sh.in));
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(sh.out));
  }
  binio::put<std::uint64_t>(os, m.net.parameter_count());
  binio::put_doubles(os, m.net.parameters().data(), m.net.parameter_count());
}

inline DiffusionModel read_checkpoint(std::istream& is) {
  binio::expect_magic(is, "TDPM");
  if (binio::get<std::uint32_t>(is) != kCheckpointVersion) throw ParseError("unsupported checkpoint version");
  const auto fingerprint = binio::get<std::uint64_t>(is);
  DiffusionModel m;
  m.config.timesteps = binio::get<std::uint32_t>(is);
  const double offset = binio::get<double>(is);
  m.config.emb_dim = binio::get<std::uint32_t>(is);
  m.config.average_categorical = binio::get<std::uint8_t>(is) != 0;
  m.config.clip_x0 = binio::get<double>(is);
  m.steps_run = binio::get<std::uint64_t>(is);
  m.final_loss = binio::get<double>(is);
  std::string layout(binio::get<std::uint32_t>(is), '\0');
  if (!is.read(layout.data(), static_cast<std::streamsize>(layout.size()))) throw ParseError("truncated binary file");
  m.layout = Layout::from_json(nlohmann::json::parse(layout));
  if (m.layout.fingerprint() != fingerprint) throw SchemaError("checkpoint layout does not match its fingerprint");
  const auto layers = binio::get<std::uint32_t>(is);
  std::vector<Denoiser::LayerShape> shapes;
  for (std::uint32_t l = 0; l < layers; ++l) {
    std::size_t in = binio::get<std::uint32_t>(is);
    std::size_t out = binio::get<std::uint32_t>(is);
    shapes.push_back({in, out});
  }
  if (shapes.empty()) throw ParseError("checkpoint has no layers");
  m.config.hidden.clear();
  for (std::size_t l = 0; l + 1 < shapes.size(); ++l) m.config.hidden.push_back(shapes[l].out);
  m.schedule = make_cosine_schedule(m.config.timesteps, offset);
  m.net = Denoiser(m.layout.dim(), m.config.emb_dim, m.config.hidden, m.layout.dim());
  if (m.net.shapes() != shapes) throw SchemaError("checkpoint layer shapes do not match its layout");
  if (binio::get<std::uint64_t>(is) != m.net.parameter_count()) throw ParseError("checkpoint parameter count mismatch");
  binio::get_doubles(is, m.net.parameters().data(), m.net.parameter_count());
  return m;
}

inline nlohmann::json loss_sidecar(const DiffusionModel& m) {
  return {{"steps", m.steps_run},
          {"final_loss", std::isfinite(m.final_loss) ? nlohmann::json(m.final_loss) : nlohmann::json()},
          {"loss", m.loss_curve}};
}

inline void save_checkpoint(const std::filesystem::path& path, const DiffusionModel& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  write_checkpoint(os, m);
  if (!os) throw IoError("write failed for " + path.string());
  std::ofstream side(std::filesystem::path(path).replace_extension(".loss.json"));
  if (!side) throw IoError("cannot write loss sidecar for " + path.string());
  side << loss_sidecar(m).dump() << '\n';
}

inline DiffusionModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  return read_checkpoint(is);
}

}  // namespace wforge
