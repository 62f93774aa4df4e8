// Probabilistic PCA: x = W z + mu + eps with z ~ N(0, I_M) and
// eps ~ N(0, sigma2 I_D).

#pragma once

#include "latentlab/core.hpp"
#include "latentlab/em.hpp"

#include <optional>
#include <utility>

namespace latentlab::ppca {

struct PpcaParams {
  Mat W;  // D x M loadings
  Vec mu;
  double sigma2 = 1.0;

  [[nodiscard]] Eigen::Index data_dim() const { return W.rows(); }
  [[nodiscard]] Eigen::Index latent_dim() const { return W.cols(); }
  /// W W^T + sigma2 I, the covariance of the marginal over x.
  [[nodiscard]] Mat marginal_cov() const;
  [[nodiscard]] Gaussian marginal() const;
  void validate() const;
};

/// Posterior over z given one observation. The covariance does not depend on x.
struct PpcaPosterior {
  Vec mean;
  Mat cov;
};

/// Eigendecomposition maximum-likelihood fit. sigma2 is the mean of the
/// D - M discarded covariance eigenvalues (floored at 1e-12) and
/// W = U_M (Lambda_M - sigma2 I)^{1/2}, canonicalized.
[[nodiscard]] PpcaParams fit_closed_form(const Mat &data, Eigen::Index latent_dim);

/// Total marginal log-likelihood of the rows of `data`.
[[nodiscard]] double log_likelihood(const PpcaParams &params, const Mat &data);

[[nodiscard]] PpcaPosterior posterior(const PpcaParams &params, const Vec &x);

/// Posterior-mean reconstruction W M^{-1} W^T (x - mu) + mu.
[[nodiscard]] Vec reconstruct(const PpcaParams &params, const Vec &x);

enum class SampleFrom { prior, posterior };

/// n draws of x. With SampleFrom::posterior, z is drawn from posterior(given)
/// instead of the prior.
[[nodiscard]] Mat sample(const PpcaParams &params, Eigen::Index n, RandomSource &rng,
                         SampleFrom from = SampleFrom::prior,
                         const std::optional<Vec> &given = std::nullopt);

/// EM fit. Starts from `init` when given, otherwise W ~ N(0, 0.1) entries and
/// sigma2 = half the mean per-coordinate variance.
[[nodiscard]] std::pair<PpcaParams, FitReport> fit_em(const Mat &data, Eigen::Index latent_dim,
                                                      const EmConfig &cfg,
                                                      std::optional<PpcaParams> init = std::nullopt);

/// Orders W's columns by decreasing norm and makes each column's
/// largest-magnitude entry positive.
[[nodiscard]] PpcaParams canonicalize(PpcaParams params);

}  // namespace latentlab::ppca
