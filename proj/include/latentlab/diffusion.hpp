// Denoising diffusion: a fixed Gaussian noising chain with closed-form
// marginals and posteriors, an epsilon-predicting network, the per-step
// KL decomposition of the bound, and ancestral sampling.
//
// Steps are 1-based, t = 1..T, with the convention alpha_bar_0 = 1.

#pragma once

#include "latentlab/core.hpp"
#include "latentlab/nn.hpp"

#include <functional>
#include <vector>

namespace latentlab::diffusion {

class NoiseSchedule {
public:
  /// Each beta must lie in (0, 1).
  explicit NoiseSchedule(Vec betas);
  /// Linear betas from beta_1 to beta_T.
  [[nodiscard]] static NoiseSchedule linear(int steps = 50, double beta_1 = 1e-4, double beta_T = 0.2);

  [[nodiscard]] int steps() const { return static_cast<int>(betas_.size()); }
  [[nodiscard]] double beta(int t) const;
  /// alpha_bar(0) = 1.
  [[nodiscard]] double alpha_bar(int t) const;
  /// 1 - alpha_bar(t) without cancellation; exactly beta(1) at t = 1.
  [[nodiscard]] double one_minus_alpha_bar(int t) const;
  /// ((1 - alpha_bar(t-1)) / (1 - alpha_bar(t))) beta(t); zero at t = 1.
  [[nodiscard]] double beta_tilde(int t) const;
  [[nodiscard]] const Vec &betas() const { return betas_; }
  [[nodiscard]] const Vec &alpha_bars() const { return alpha_bars_; }

private:
  void check_step(int t) const;
  Vec betas_;
  Vec alpha_bars_;
  Vec complements_;  // 1 - alpha_bars_
};

inline constexpr int kTimeFeatures = 5;

/// Per-row features [t/T, sin(pi t/T), cos(pi t/T), sin(2 pi t/T), cos(2 pi t/T)].
[[nodiscard]] Mat time_embedding(const std::vector<int> &t, int steps);

struct DiffusionConfig {
  int steps = 50;
  double beta_1 = 1e-4;
  double beta_T = 0.2;
  std::vector<int> hidden{32, 32};
  nn::Activation activation = nn::Activation::tanh;
};

struct DiffusionModel {
  NoiseSchedule schedule = NoiseSchedule::linear();
  nn::Mlp eps_net;  // (d + kTimeFeatures) -> d
  int dim = 0;

  [[nodiscard]] static DiffusionModel create(int dim, const DiffusionConfig &cfg, RandomSource &rng);
  void validate() const;
};

/// Predicts the injected noise for each row of x_t at that row's step.
using EpsPredictor = std::function<Mat(const Mat &x_t, const std::vector<int> &t)>;

[[nodiscard]] EpsPredictor predictor(const DiffusionModel &model);
/// Differentiable eps_theta(x_t, t), n x d.
[[nodiscard]] nn::Tensor predict_eps(const DiffusionModel &model, const nn::Tensor &x_t, const std::vector<int> &t);

struct Noised {
  Mat x_t;
  Mat eps;
};

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, one step per row.
[[nodiscard]] Noised q_sample(const NoiseSchedule &s, const Mat &x0, const std::vector<int> &t, RandomSource &rng);
[[nodiscard]] Noised q_sample(const NoiseSchedule &s, const Mat &x0, int t, RandomSource &rng);
/// One forward kernel: x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps.
[[nodiscard]] Mat q_step(const NoiseSchedule &s, const Mat &x_prev, int t, RandomSource &rng);

struct Posterior {
  Mat mean;                 // rows of mu_tilde
  double variance = 0.0;    // beta_tilde, shared by all coordinates
};

/// q(x_{t-1} | x_t, x0).
[[nodiscard]] Posterior posterior_params(const NoiseSchedule &s, const Mat &x_t, const Mat &x0, int t);

/// Posterior mean with x0 replaced by (x_t - sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_bar_t).
[[nodiscard]] Mat reverse_mean(const NoiseSchedule &s, const Mat &x_t, const Mat &eps, int t);

/// Mean over rows of ||eps - eps_hat(x_t, t)||^2 with t uniform on 1..T and
/// a single eps per row.
[[nodiscard]] double loss_simple(const NoiseSchedule &s, const EpsPredictor &eps_hat, const Mat &x0,
                                 RandomSource &rng);
[[nodiscard]] double loss_simple(const DiffusionModel &model, const Mat &x0, RandomSource &rng);
/// Differentiable form with the steps and noise supplied.
[[nodiscard]] nn::Tensor loss_simple_tensor(const DiffusionModel &model, const Mat &x0, const std::vector<int> &t,
                                            const Mat &eps);

/// Step-t term of the bound for given x_t, averaged over rows. For t >= 2:
/// ||mu_tilde - mu_theta||^2 / (2 beta_tilde_t). For t = 1, where beta_tilde
/// vanishes, the reconstruction term ||x0 - mu_theta||^2 / (2 beta_1).
[[nodiscard]] double elbo_term(const NoiseSchedule &s, const EpsPredictor &eps_hat, const Mat &x0, const Mat &x_t,
                               int t);
/// Terms for t = 1..T (index t-1), each at a fresh x_t ~ q(x_t | x0).
[[nodiscard]] std::vector<double> elbo_terms(const NoiseSchedule &s, const EpsPredictor &eps_hat, const Mat &x0,
                                             RandomSource &rng);
[[nodiscard]] std::vector<double> elbo_terms(const DiffusionModel &model, const Mat &x0, RandomSource &rng);

/// Single-sample variational lower bound on log p(x0), one entry per row:
/// -KL(q(x_T | x0) || N(0, I)) - sum_{t>=2} KL terms + log N(x0; mu_theta(x_1, 1), beta_1 I).
[[nodiscard]] Vec point_elbo(const DiffusionModel &model, const Mat &x0, RandomSource &rng);

/// Ancestral sampling from x_T ~ N(0, I); variance beta_tilde_t, none at t = 1.
[[nodiscard]] Mat sample(const NoiseSchedule &s, const EpsPredictor &eps_hat, int dim, Eigen::Index n,
                         RandomSource &rng);
[[nodiscard]] Mat sample(const DiffusionModel &model, Eigen::Index n, RandomSource &rng);

struct TrainConfig {
  int epochs = 200;
  int batch = 128;
  nn::AdamConfig adam{};
};

struct TrainTrace {
  std::vector<double> epoch_loss;  // mean loss_simple over the epoch's batches
};

/// Minibatch Adam descent on loss_simple. Throws NumericError naming the
/// epoch on a non-finite loss.
TrainTrace train(DiffusionModel &model, const Mat &data, const TrainConfig &cfg, RandomSource &rng);

}  // namespace latentlab::diffusion
