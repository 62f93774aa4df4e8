// Normalizing flows: planar and affine-coupling layers composed into an
// invertible map x = f_K(...f_1(z0)) with a standard normal base density.
//
// "Forward" is the generative direction z0 -> x. Log-determinants reported
// by the forward pass are log|det df/dz|; those reported by the inverse pass
// are log|det df^{-1}/dx| and equal minus the forward values.

#pragma once

#include "latentlab/core.hpp"
#include "latentlab/nn.hpp"

#include <variant>
#include <vector>

namespace latentlab::flow {

/// f(z) = z + u_hat * tanh(w'z + b), with u_hat the reparameterized u that
/// guarantees w'u_hat > -1.
struct PlanarLayer {
  Vec u;
  Vec w;
  double b = 0.0;

  [[nodiscard]] static PlanarLayer random(int dim, RandomSource &rng, double scale = 1.0);
  [[nodiscard]] int dim() const { return static_cast<int>(w.size()); }
  /// u + (m(w'u) - w'u) w / |w|^2 with m(a) = -1 + softplus(a); u itself when w = 0.
  [[nodiscard]] Vec u_hat() const;
  void validate() const;
};

/// x_a = z_a, x_b = z_b * exp(s(z_a)) + t(z_a), with s = 5 tanh(s_net / 5).
struct CouplingLayer {
  std::vector<int> cond;   // index set a
  std::vector<int> trans;  // index set b
  nn::Mlp s_net;           // |a| -> |b|
  nn::Mlp t_net;           // |a| -> |b|

  /// zero_output starts both nets at exactly zero output (identity layer).
  [[nodiscard]] static CouplingLayer create(int dim, std::vector<int> cond, const std::vector<int> &hidden,
                                            nn::Activation act, RandomSource &rng, bool zero_output);
  [[nodiscard]] int dim() const { return static_cast<int>(cond.size() + trans.size()); }
  [[nodiscard]] std::vector<nn::Tensor> parameters() const;
  void validate() const;
};

/// x[:, i] = z[:, perm[i]]; volume preserving.
struct PermutationLayer {
  std::vector<int> perm;

  [[nodiscard]] int dim() const { return static_cast<int>(perm.size()); }
  void validate() const;
};

using Layer = std::variant<PlanarLayer, CouplingLayer, PermutationLayer>;

[[nodiscard]] int layer_dim(const Layer &layer);

struct CouplingConfig {
  int couplings = 6;
  std::vector<int> hidden{32, 32};
  nn::Activation activation = nn::Activation::tanh;
  bool zero_output = true;
};

struct FlowModel {
  int dim = 0;
  std::vector<Layer> layers;

  /// Coupling layers whose conditioning half alternates, with a fixed random
  /// permutation inside each half inserted between consecutive couplings.
  [[nodiscard]] static FlowModel coupling_stack(int dim, const CouplingConfig &cfg, RandomSource &rng);
  [[nodiscard]] static FlowModel planar_stack(int dim, int count, RandomSource &rng, double scale = 1.0);
  [[nodiscard]] std::vector<nn::Tensor> parameters() const;
  /// True when every layer has a differentiable inverse (no planar layers).
  [[nodiscard]] bool trainable() const;
  void validate() const;
};

struct Transformed {
  Mat value;   // n x d
  Vec logdet;  // n, summed over the layers traversed
};

[[nodiscard]] Transformed layer_forward(const Layer &layer, const Mat &z);
/// Throws NumericError if a planar root-find does not converge.
[[nodiscard]] Transformed layer_inverse(const Layer &layer, const Mat &x);

[[nodiscard]] Transformed forward_with_logdet(const FlowModel &model, const Mat &z0);
[[nodiscard]] Transformed inverse_with_logdet(const FlowModel &model, const Mat &x);
[[nodiscard]] Mat inverse(const FlowModel &model, const Mat &x);

/// Per-row log p_X(x) = log N(f^{-1}(x); 0, I) + log|det df^{-1}/dx|.
[[nodiscard]] Vec log_likelihood(const FlowModel &model, const Mat &x);
/// Differentiable per-row log-likelihood (n x 1); requires model.trainable().
[[nodiscard]] nn::Tensor log_likelihood_tensor(const FlowModel &model, const nn::Tensor &x);

[[nodiscard]] Mat sample(const FlowModel &model, Eigen::Index n, RandomSource &rng);

struct FitConfig {
  int epochs = 100;
  int batch = 128;
  nn::AdamConfig adam{};
};

struct FitTrace {
  std::vector<double> epoch_loglik;  // mean per-point log-likelihood over the epoch's batches
};

/// Minibatch Adam ascent on the mean log-likelihood. Only coupling and
/// permutation layers are supported. Throws NumericError naming the epoch on
/// a non-finite objective.
FitTrace fit(FlowModel &model, const Mat &data, const FitConfig &cfg, RandomSource &rng);

}  // namespace latentlab::flow
