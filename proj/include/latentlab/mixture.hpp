// Discrete-latent flat models: Gaussian mixtures and latent class analysis.
// Both share the responsibility machinery: gamma_ik is the posterior of
// class k for row i, computed in the log domain.

#pragma once

#include "latentlab/core.hpp"
#include "latentlab/em.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace latentlab::mixture {

struct GmmParams {
  Simplex weights;
  std::vector<Vec> means;
  std::vector<Mat> covs;

  [[nodiscard]] Eigen::Index k() const { return weights.size(); }
  [[nodiscard]] Eigen::Index dim() const { return means.empty() ? 0 : means.front().size(); }
  void validate() const;
};

/// Per-class categorical emission tables; item_probs[k][j] is the
/// distribution of item j's category under class k.
struct LcaParams {
  Simplex weights;
  std::vector<std::vector<Simplex>> item_probs;

  [[nodiscard]] Eigen::Index k() const { return weights.size(); }
  [[nodiscard]] Eigen::Index items() const {
    return item_probs.empty() ? 0 : static_cast<Eigen::Index>(item_probs.front().size());
  }
  [[nodiscard]] std::vector<int> categories() const;
  void validate() const;
};

struct Responsibilities {
  Mat gamma;           // N x K, rows are simplexes
  Vec point_loglik;    // log p(x_i) under the parameters that produced gamma
};

/// Eigenvalue floor applied to every fitted covariance:
/// 1e-6 times the mean per-coordinate variance of the data (1e-6 if the
/// data has zero variance).
[[nodiscard]] double covariance_floor(const Mat &data);

/// Posterior over components for one observation (Bayes' rule in log space).
/// gmm_e_step calls this for every row.
[[nodiscard]] Simplex gmm_posterior(const GmmParams &params, const Vec &x);
[[nodiscard]] double gmm_loglik(const GmmParams &params, const Mat &data);
[[nodiscard]] Responsibilities gmm_e_step(const GmmParams &params, const Mat &data);

/// Weighted maximum-likelihood update. Components whose effective count
/// falls below 1e-8 are re-seeded at the row with the lowest likelihood under
/// `resp` (its point_loglik), and reported through `events`.
[[nodiscard]] GmmParams gmm_m_step(const Mat &data, const Responsibilities &resp,
                                   double cov_floor, EmEvents *events = nullptr);

/// K distinct rows chosen by a greedy farthest-point sweep starting from a
/// seeded random row; covariances start at the global covariance.
[[nodiscard]] GmmParams gmm_init(const Mat &data, Eigen::Index k, RandomSource &rng);

[[nodiscard]] std::pair<GmmParams, FitReport> fit_gmm(const Mat &data, Eigen::Index k,
                                                      const EmConfig &cfg,
                                                      std::optional<GmmParams> init = std::nullopt);

/// Rows of category codes (0-based). Throws if any code is outside
/// [0, categories[j]) for its item, naming the row and item.
void check_codes(const IntMat &data, const std::vector<int> &categories);

[[nodiscard]] Simplex lca_posterior(const LcaParams &params, const IntMat &data, Eigen::Index row);
[[nodiscard]] double lca_loglik(const LcaParams &params, const IntMat &data);
[[nodiscard]] Responsibilities lca_e_step(const LcaParams &params, const IntMat &data);
/// Item tables are floored at 1e-10 and renormalized.
[[nodiscard]] LcaParams lca_m_step(const IntMat &data, const std::vector<int> &categories,
                                   const Responsibilities &resp, EmEvents *events = nullptr);
/// Empirical category frequencies perturbed by +-10% seeded noise per class.
[[nodiscard]] LcaParams lca_init(const IntMat &data, const std::vector<int> &categories,
                                 Eigen::Index k, RandomSource &rng);
[[nodiscard]] std::pair<LcaParams, FitReport> fit_lca(const IntMat &data,
                                                      const std::vector<int> &categories,
                                                      Eigen::Index k, const EmConfig &cfg,
                                                      std::optional<LcaParams> init = std::nullopt);

/// Category count per item inferred as max code + 1.
[[nodiscard]] std::vector<int> infer_categories(const IntMat &data);

/// Components in lexicographic order of their means; ties keep input order.
[[nodiscard]] GmmParams canonicalize(const GmmParams &params);
/// Classes in lexicographic order of their flattened item tables.
[[nodiscard]] LcaParams canonicalize(const LcaParams &params);

}  // namespace latentlab::mixture
