// Variational autoencoder with a diagonal-Gaussian encoder, a standard
// normal prior and either a fixed-variance Gaussian or a Bernoulli decoder.

#pragma once

#include "latentlab/core.hpp"
#include "latentlab/nn.hpp"

#include <vector>

namespace latentlab::vae {

enum class Likelihood { gaussian, bernoulli };

struct VaeConfig {
  int latent = 1;
  std::vector<int> hidden{64};
  nn::Activation activation = nn::Activation::tanh;
  Likelihood likelihood = Likelihood::gaussian;
  double sigma_dec = 0.1;
};

struct VaeModel {
  nn::Mlp encoder;  // D -> 2d: mean head, then log-variance head
  nn::Mlp decoder;  // d -> D: Gaussian mean or Bernoulli logits
  int latent = 1;
  Likelihood likelihood = Likelihood::gaussian;
  double sigma_dec = 0.1;

  [[nodiscard]] static VaeModel create(int data_dim, const VaeConfig &cfg, RandomSource &rng);
  [[nodiscard]] int data_dim() const { return encoder.in_dim(); }
  [[nodiscard]] std::vector<nn::Tensor> parameters() const;
  void validate() const;
};

struct Encoding {
  Mat mu;     // batch x d
  Mat sigma;  // batch x d, within [1e-4, 1e4]
};

struct EncodedTensors {
  nn::Tensor mu;
  nn::Tensor logvar;  // clamped to [2 log 1e-4, 2 log 1e4]
};

struct ElboParts {
  double recon = 0.0;
  double kl = 0.0;
  double elbo = 0.0;
};

[[nodiscard]] Encoding encode(const VaeModel &model, const Mat &x);
[[nodiscard]] EncodedTensors encode(const VaeModel &model, const nn::Tensor &x);

/// z = mu + sigma * eps with eps ~ N(0, I).
[[nodiscard]] Mat reparameterize(const Mat &mu, const Mat &sigma, RandomSource &rng);
/// Differentiable form with the noise supplied: z = mu + exp(logvar / 2) * eps.
[[nodiscard]] nn::Tensor reparameterize(const nn::Tensor &mu, const nn::Tensor &logvar, const Mat &eps);

/// KL(N(mu, diag sigma^2) || N(0, I)).
[[nodiscard]] double kl_standard_normal(const Vec &mu, const Vec &sigma);
/// Per-row KL to the prior, batch x 1.
[[nodiscard]] nn::Tensor kl_standard_normal(const nn::Tensor &mu, const nn::Tensor &logvar);

/// Per-row log p(x | z) for decoder output `out` (mean or logits).
[[nodiscard]] nn::Tensor log_likelihood(const VaeModel &model, const nn::Tensor &x, const nn::Tensor &out);

/// Batch-mean ELBO as a differentiable 1x1 tensor; eps holds one noise row
/// per data row.
[[nodiscard]] nn::Tensor elbo_tensor(const VaeModel &model, const nn::Tensor &x, const Mat &eps);

/// Batch-mean ELBO parts, each reconstruction term averaged over `samples`
/// reparameterized draws.
[[nodiscard]] ElboParts elbo(const VaeModel &model, const Mat &x, RandomSource &rng, int samples = 1);

struct TrainConfig {
  int epochs = 50;
  int batch = 32;
  nn::AdamConfig adam{};
  bool freeze_encoder = false;
  bool freeze_decoder = false;
};

struct TrainTrace {
  std::vector<double> epoch_elbo;  // mean single-sample ELBO over the epoch's batches
};

/// Minibatch Adam ascent on the ELBO. Throws NumericError naming the epoch
/// if the objective becomes non-finite.
TrainTrace train(VaeModel &model, const Mat &data, const TrainConfig &cfg, RandomSource &rng);

/// Decoder mean (Gaussian) or probabilities (Bernoulli) at the posterior mean.
[[nodiscard]] Mat reconstruct(const VaeModel &model, const Mat &x);

/// Ancestral samples. Gaussian: decoder mean plus sigma_dec noise.
/// Bernoulli: probabilities, or 0/1 draws when `binary` is set.
[[nodiscard]] Mat sample(const VaeModel &model, Eigen::Index n, RandomSource &rng, bool binary = false);

}  // namespace latentlab::vae
