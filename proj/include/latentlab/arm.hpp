// Autoregressive model over fixed-length discrete sequences. A single masked
// network maps the one-hot sequence to V logits per position, with the masks
// arranged so that position d's logits see only positions before d.

#pragma once

#include "latentlab/core.hpp"
#include "latentlab/nn.hpp"

#include <vector>

namespace latentlab::arm {

/// Stand-in for log 0 in reported log-likelihoods.
inline constexpr double kLogZero = -1e30;

struct MaskedLinear {
  nn::Tensor weight;  // in x out
  nn::Tensor bias;    // 1 x out
  Mat mask;           // in x out, entries 0 or 1
};

struct ArmConfig {
  std::vector<int> hidden{64};
  nn::Activation activation = nn::Activation::tanh;
};

struct ArModel {
  int length = 0;    // D
  int alphabet = 0;  // V
  std::vector<MaskedLinear> hidden;
  MaskedLinear output;  // last hidden (or input when no hidden) -> D * V
  MaskedLinear skip;    // direct input -> D * V, strictly causal
  nn::Activation activation = nn::Activation::tanh;

  /// Hidden unit k of every layer has degree 1 + k mod (D - 1); a unit of
  /// degree m sees positions 1..m and feeds positions m+1..D.
  [[nodiscard]] static ArModel create(int length, int alphabet, const ArmConfig &cfg, RandomSource &rng);
  /// All weights zero: every conditional is uniform.
  [[nodiscard]] static ArModel uniform(int length, int alphabet);
  [[nodiscard]] std::vector<nn::Tensor> parameters() const;
  void validate() const;
};

/// Rows are sequences of symbols in [0, V).
void check_sequences(const ArModel &model, const IntMat &x);

[[nodiscard]] Mat one_hot(const IntMat &x, int alphabet);

/// n x (D * V) logits; block d holds the logits of p(x_d | x_{<d}).
[[nodiscard]] nn::Tensor logits(const ArModel &model, const IntMat &x);

/// n x (D * V) conditional probabilities, block-wise softmax of logits.
[[nodiscard]] Mat conditional_probs(const ArModel &model, const IntMat &x);

/// Differentiable per-sequence log-likelihood (n x 1) under teacher forcing.
[[nodiscard]] nn::Tensor log_likelihood_tensor(const ArModel &model, const IntMat &x);

/// Per-sequence log-likelihood; -inf is reported as kLogZero.
[[nodiscard]] Vec log_likelihood(const ArModel &model, const IntMat &x);

/// Left-to-right ancestral sampling.
[[nodiscard]] IntMat sample(const ArModel &model, Eigen::Index n, RandomSource &rng);

/// Every sequence of length D over V symbols, in lexicographic order.
[[nodiscard]] IntMat all_sequences(int length, int alphabet);

struct TrainConfig {
  int epochs = 100;
  int batch = 64;
  nn::AdamConfig adam{};
};

struct TrainTrace {
  std::vector<double> epoch_loglik;  // mean per-sequence log-likelihood over the epoch's batches
};

/// Minibatch Adam ascent on the mean log-likelihood. Throws NumericError
/// naming the epoch on a non-finite objective.
TrainTrace train(ArModel &model, const IntMat &data, const TrainConfig &cfg, RandomSource &rng);

}  // namespace latentlab::arm
