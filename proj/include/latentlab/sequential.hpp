// Time-series latent variable models: hidden Markov models with discrete or
// Gaussian emissions, and linear-Gaussian state-space models (LDS).
//
// A sequence is a T x d matrix with one observation per row. Discrete
// sequences are T x 1 with integer symbol values.

#pragma once

#include "latentlab/core.hpp"
#include "latentlab/em.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace latentlab::sequential {

using Sequence = Mat;

enum class EmissionKind { discrete, gaussian };

struct HmmParams {
  Simplex pi;
  Mat trans;  // trans(i, j) = p(z_t = j | z_{t-1} = i)
  EmissionKind kind = EmissionKind::discrete;
  std::vector<Simplex> emit_probs;  // discrete: one table per state
  std::vector<Gaussian> emit_gauss;  // gaussian: one density per state

  [[nodiscard]] Eigen::Index k() const { return pi.size(); }
  /// Alphabet size (discrete) or observation dimension (gaussian).
  [[nodiscard]] Eigen::Index obs_dim() const;
  void validate() const;
};

struct HmmMarginals {
  Mat gamma;                  // T x K, gamma(t, k) = p(z_t = k | x_{1:T})
  std::vector<Mat> pairwise;  // T-1 matrices, (i, j) = p(z_t = i, z_{t+1} = j | x_{1:T})
  double loglik = 0.0;
};

/// log p(x_t | z_t = k) as a T x K matrix.
[[nodiscard]] Mat emission_log_probs(const HmmParams &params, const Sequence &obs);

/// Log-domain forward-backward with per-step normalizers. Throws
/// NumericError when the sequence has probability zero.
[[nodiscard]] HmmMarginals hmm_forward_backward(const HmmParams &params, const Sequence &obs);
[[nodiscard]] double hmm_loglik(const HmmParams &params, const std::vector<Sequence> &seqs);

/// Ancestral sample of length t; returns (observations, states).
[[nodiscard]] std::pair<Sequence, IntVec> hmm_sample(const HmmParams &params, Eigen::Index t,
                                                     RandomSource &rng);

/// Reorders states: ascending emission entropy (discrete) or ascending
/// emission-mean norm (gaussian), ties broken lexicographically.
[[nodiscard]] HmmParams canonicalize(const HmmParams &params);

struct HmmFitOptions {
  /// Discrete alphabet size; inferred as max symbol + 1 when zero.
  Eigen::Index symbols = 0;
  std::optional<HmmParams> init;
};

/// Baum-Welch over all sequences. Emission tables are floored at 1e-10;
/// Gaussian covariances share the mixture module's eigenvalue floor. States
/// with expected occupancy below 1e-8 are re-seeded and reported as events.
/// The result is canonicalized.
[[nodiscard]] std::pair<HmmParams, FitReport> fit_hmm(const std::vector<Sequence> &seqs,
                                                      Eigen::Index k, EmissionKind kind,
                                                      const EmConfig &cfg,
                                                      const HmmFitOptions &options = {});

struct LdsParams {
  Mat A;       // dz x dz
  Mat C;       // dx x dz
  Mat Q;       // dz x dz
  Mat R;       // dx x dx
  Vec mu0;     // mean of z_1
  Mat Sigma0;  // covariance of z_1

  [[nodiscard]] Eigen::Index dz() const { return A.rows(); }
  [[nodiscard]] Eigen::Index dx() const { return C.rows(); }
  void validate() const;
};

struct FilterResult {
  std::vector<Gaussian> predicted;  // p(z_t | x_{1:t-1}); predicted[0] is the z_1 prior
  std::vector<Gaussian> filtered;   // p(z_t | x_{1:t})
  double loglik = 0.0;
};

struct LdsMarginals {
  std::vector<Gaussian> smoothed;  // p(z_t | x_{1:T})
  std::vector<Mat> cross;          // T-1 matrices, Cov(z_{t+1}, z_t | x_{1:T})
  double loglik = 0.0;
};

/// Predict/update recursion with Joseph-form covariance updates. Throws
/// NumericError on a singular innovation covariance.
[[nodiscard]] FilterResult kalman_filter(const LdsParams &params, const Sequence &obs);
/// Rauch-Tung-Striebel backward pass on top of kalman_filter.
[[nodiscard]] LdsMarginals kalman_smooth(const LdsParams &params, const Sequence &obs);
[[nodiscard]] double lds_loglik(const LdsParams &params, const std::vector<Sequence> &seqs);

/// Returns (observations T x dx, states T x dz).
[[nodiscard]] std::pair<Sequence, Mat> lds_sample(const LdsParams &params, Eigen::Index t,
                                                  RandomSource &rng);

struct LdsFitOptions {
  std::optional<LdsParams> init;
};

/// EM with a smoother E-step and least-squares M-step (ridge 1e-9 on the
/// normal equations). Sigma0 is re-estimated only from two or more
/// sequences. Default start: A = 0.5 I, C = I when dz = dx (otherwise the
/// leading principal directions), Q = I, R = diag of the data covariance,
/// mu0 = 0, Sigma0 = I.
[[nodiscard]] std::pair<LdsParams, FitReport> fit_lds(const std::vector<Sequence> &seqs,
                                                      Eigen::Index dz, const EmConfig &cfg,
                                                      const LdsFitOptions &options = {});

}  // namespace latentlab::sequential
