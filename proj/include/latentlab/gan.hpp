// Toy generative adversarial network: a generator pushing N(0, I_m) noise
// into data space and a sigmoid discriminator, trained by alternating
// minibatch updates. The model defines a sampler only; there is no density.

#pragma once

#include "latentlab/core.hpp"
#include "latentlab/nn.hpp"

#include <vector>

namespace latentlab::gan {

/// Discriminator outputs are clamped to [kClamp, 1 - kClamp] before any log.
inline constexpr double kClamp = 1e-7;

enum class GenLoss {
  non_saturating,  // -mean log D(G(z))
  minimax,         // mean log(1 - D(G(z)))
};

struct GanConfig {
  int prior_dim = 1;
  std::vector<int> gen_hidden{16};  // empty: linear generator
  std::vector<int> disc_hidden{32};
  nn::Activation activation = nn::Activation::tanh;
};

struct GanModel {
  nn::Mlp gen;   // m -> D
  nn::Mlp disc;  // D -> 1, sigmoid output
  int prior_dim = 1;

  [[nodiscard]] static GanModel create(int data_dim, const GanConfig &cfg, RandomSource &rng);
  [[nodiscard]] int data_dim() const { return gen.out_dim(); }
  void validate() const;
};

/// Clamped D(x), n x 1.
[[nodiscard]] nn::Tensor discriminate(const GanModel &model, const nn::Tensor &x);
[[nodiscard]] Vec discriminate(const GanModel &model, const Mat &x);

/// -(mean log D(real) + mean log(1 - D(fake))).
[[nodiscard]] nn::Tensor disc_loss(const GanModel &model, const nn::Tensor &real, const nn::Tensor &fake);
[[nodiscard]] double disc_loss(const GanModel &model, const Mat &real, const Mat &fake);

/// Generator objective on generated points.
[[nodiscard]] nn::Tensor gen_loss(const GanModel &model, const nn::Tensor &fake, GenLoss kind = GenLoss::non_saturating);
[[nodiscard]] double gen_loss(const GanModel &model, const Mat &fake, GenLoss kind = GenLoss::non_saturating);

[[nodiscard]] Mat prior_sample(const GanModel &model, Eigen::Index n, RandomSource &rng);
[[nodiscard]] Mat generate(const GanModel &model, const Mat &z);
[[nodiscard]] Mat generate(const GanModel &model, Eigen::Index n, RandomSource &rng);

struct TrainConfig {
  int steps = 2000;  // generator updates
  int batch = 64;
  int k_disc = 1;    // discriminator updates per generator update
  GenLoss loss = GenLoss::non_saturating;
  nn::AdamConfig gen_adam{1e-3, 0.5, 0.999, 1e-8};
  nn::AdamConfig disc_adam{1e-3, 0.5, 0.999, 1e-8};
  bool freeze_generator = false;
};

struct TrainTrace {
  std::vector<double> disc_loss;  // last discriminator loss of each step
  std::vector<double> gen_loss;
};

/// Fixed step budget of alternating updates. Throws NumericError naming the
/// step on a non-finite loss.
TrainTrace train(GanModel &model, const Mat &data, const TrainConfig &cfg, RandomSource &rng);

}  // namespace latentlab::gan
