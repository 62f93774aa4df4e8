// Two-parameter logistic item response model with a standard-normal
// ability prior: P(X_j = 1 | theta) = sigmoid(a_j theta - b_j).
// The ability integral is approximated by Gauss-Hermite quadrature, which
// also supplies the (approximate) E-step for marginal maximum likelihood.

#pragma once

#include "latentlab/core.hpp"
#include "latentlab/em.hpp"

#include <optional>
#include <utility>

namespace latentlab::irt {

struct IrtParams {
  Vec a;  // discrimination, > 0
  Vec b;  // difficulty

  [[nodiscard]] Eigen::Index items() const { return a.size(); }
  void validate() const;
};

/// Nodes and weights for expectations under N(0, 1).
struct QuadratureRule {
  Vec nodes;
  Vec weights;

  /// n-point Gauss-Hermite rule rescaled to the standard-normal measure
  /// (Golub-Welsch on the probabilists' Hermite recurrence).
  [[nodiscard]] static QuadratureRule gauss_hermite(int n = 41);
  [[nodiscard]] Eigen::Index size() const { return nodes.size(); }
};

[[nodiscard]] double item_prob(double theta, double a, double b);

/// Per-person log of the quadrature-approximated marginal likelihood.
[[nodiscard]] Vec person_loglik(const IrtParams &params, const IntMat &responses,
                                const QuadratureRule &quad);
[[nodiscard]] double marginal_loglik(const IrtParams &params, const IntMat &responses,
                                     const QuadratureRule &quad);

struct ThetaPosterior {
  double eap = 0.0;
  double sd = 0.0;
  Simplex node_weights;
};

[[nodiscard]] ThetaPosterior posterior_theta(const IrtParams &params, const IntVec &responses,
                                             const QuadratureRule &quad);

struct IrtFitOptions {
  /// When false, a stays at its initial value (1 unless `init` is given).
  bool estimate_discrimination = true;
  std::optional<IrtParams> init;
};

/// Quadrature EM. The M-step runs at most 25 damped Newton steps per item
/// on (log a_j, b_j), stopping when the gradient norm drops below 1e-10.
/// The monotonicity slack is raised to at least 1e-6.
[[nodiscard]] std::pair<IrtParams, FitReport> fit_irt(const IntMat &responses,
                                                      const QuadratureRule &quad,
                                                      const EmConfig &cfg,
                                                      const IrtFitOptions &options = {});

/// Throws unless every entry is 0 or 1.
void check_binary(const IntMat &responses);

}  // namespace latentlab::irt
