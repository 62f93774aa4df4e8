#include "latentlab/irt.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <string>

namespace latentlab::irt {

namespace {

constexpr int kNewtonSteps = 25;
constexpr double kGradTol = 1e-10;

// Expected complete-data log-likelihood of one item given the expected
// counts per node: n[q] persons at node q, r[q] of them answering 1.
struct ItemObjective {
  const Vec &nodes;
  const Vec &n;
  const Vec &r;

  double value(double log_a, double b) const {
    const double a = std::exp(log_a);
    double total = 0.0;
    for (Eigen::Index q = 0; q < nodes.size(); ++q) {
      const double eta = a * nodes[q] - b;
      total += r[q] * log_sigmoid(eta) + (n[q] - r[q]) * log_sigmoid(-eta);
    }
    return total;
  }

  // gradient and Hessian in (log a, b)
  void derivatives(double log_a, double b, Eigen::Vector2d &g, Eigen::Matrix2d &h) const {
    const double a = std::exp(log_a);
    g.setZero();
    h.setZero();
    for (Eigen::Index q = 0; q < nodes.size(); ++q) {
      const double eta = a * nodes[q] - b;
      const double p = sigmoid(eta);
      const double resid = r[q] - n[q] * p;
      const double w = n[q] * p * (1.0 - p);
      const double dl = a * nodes[q];
      g[0] += resid * dl;
      g[1] -= resid;
      h(0, 0) += -w * dl * dl + resid * dl;
      h(0, 1) += w * dl;
      h(1, 1) -= w;
    }
    h(1, 0) = h(0, 1);
  }
};

// Damped Newton ascent that never lowers the item objective.
void maximize_item(const ItemObjective &obj, double &log_a, double &b, bool estimate_a) {
  double current = obj.value(log_a, b);
  for (int step = 0; step < kNewtonSteps; ++step) {
    Eigen::Vector2d g;
    Eigen::Matrix2d h;
    obj.derivatives(log_a, b, g, h);
    if (!estimate_a) {
      g[0] = 0.0;
      h(0, 1) = h(1, 0) = 0.0;
      h(0, 0) = -1.0;
    }
    if (g.norm() < kGradTol) break;
    Eigen::Vector2d dir;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(h);
    if (es.eigenvalues().maxCoeff() < 0.0) {
      dir = -h.ldlt().solve(g);
    } else {
      // Fall back to the Fisher-scoring direction, which is always an ascent
      // direction (its curvature drops the residual term).
      Eigen::Matrix2d fisher = h;
      double w_sum = 0.0;
      const double a = std::exp(log_a);
      for (Eigen::Index q = 0; q < obj.nodes.size(); ++q) {
        const double p = sigmoid(a * obj.nodes[q] - b);
        const double resid = obj.r[q] - obj.n[q] * p;
        w_sum += resid * a * obj.nodes[q];
      }
      fisher(0, 0) -= w_sum;
      if (!estimate_a) fisher(0, 0) = -1.0;
      fisher.diagonal().array() -= 1e-12;
      dir = -fisher.ldlt().solve(g);
    }
    if (!estimate_a) dir[0] = 0.0;
    double scale = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving, scale *= 0.5) {
      const double la = log_a + scale * dir[0];
      const double bb = b + scale * dir[1];
      const double v = obj.value(la, bb);
      if (std::isfinite(v) && v >= current) {
        log_a = la;
        b = bb;
        current = v;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
}

Mat node_log_lik(const IrtParams &params, const IntMat &responses, const QuadratureRule &quad) {
  const auto n = responses.rows();
  const auto nq = quad.size();
  const auto j = params.items();
  // log P(X_j = 1 | node) and log P(X_j = 0 | node)
  Mat log1(nq, j), log0(nq, j);
  for (Eigen::Index q = 0; q < nq; ++q) {
    for (Eigen::Index k = 0; k < j; ++k) {
      const double eta = params.a[k] * quad.nodes[q] - params.b[k];
      log1(q, k) = log_sigmoid(eta);
      log0(q, k) = log_sigmoid(-eta);
    }
  }
  Mat out(n, nq);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t ii) {
    const auto i = static_cast<Eigen::Index>(ii);
    for (Eigen::Index q = 0; q < nq; ++q) {
      double s = std::log(quad.weights[q]);
      for (Eigen::Index k = 0; k < j; ++k) s += responses(i, k) ? log1(q, k) : log0(q, k);
      out(i, q) = s;
    }
  });
  return out;
}

struct IrtEm {
  using Params = IrtParams;
  using Posterior = Mat;  // N x Q posterior node weights

  const IntMat &responses;
  const QuadratureRule &quad;
  bool estimate_a;

  Posterior e_step(const Params &p) const {
    Mat lw = node_log_lik(p, responses, quad);
    for (Eigen::Index i = 0; i < lw.rows(); ++i)
      lw.row(i) = Simplex::from_log(lw.row(i).transpose()).probs().transpose();
    return lw;
  }

  Params m_step(const Posterior &w, const Params &p, EmEvents &) const {
    const Vec n = w.colwise().sum().transpose();
    Params next = p;
    for (Eigen::Index k = 0; k < p.items(); ++k) {
      Vec r = Vec::Zero(quad.size());
      for (Eigen::Index i = 0; i < responses.rows(); ++i)
        if (responses(i, k)) r += w.row(i).transpose();
      double log_a = std::log(p.a[k]);
      double b = p.b[k];
      maximize_item(ItemObjective{quad.nodes, n, r}, log_a, b, estimate_a);
      next.a[k] = std::exp(log_a);
      next.b[k] = b;
    }
    return next;
  }

  double objective(const Params &p) const { return marginal_loglik(p, responses, quad); }
};

}  // namespace

void IrtParams::validate() const {
  if (a.size() != b.size()) throw InvalidArgument("IrtParams: a and b lengths differ");
  if (!a.allFinite() || !b.allFinite()) throw InvalidArgument("IrtParams: non-finite parameter");
}

QuadratureRule QuadratureRule::gauss_hermite(int n) {
  if (n < 1) throw InvalidArgument("gauss_hermite: need at least one node");
  Mat jacobi = Mat::Zero(n, n);
  for (int k = 1; k < n; ++k) jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Mat> es(jacobi);
  QuadratureRule rule;
  rule.nodes = es.eigenvalues();
  rule.weights = es.eigenvectors().row(0).transpose().array().square();
  // enforce exact mirror symmetry
  for (int i = 0; i < n / 2; ++i) {
    const int m = n - 1 - i;
    const double x = 0.5 * (rule.nodes[m] - rule.nodes[i]);
    const double w = 0.5 * (rule.weights[m] + rule.weights[i]);
    rule.nodes[i] = -x;
    rule.nodes[m] = x;
    rule.weights[i] = rule.weights[m] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  rule.weights /= rule.weights.sum();
  return rule;
}

double item_prob(double theta, double a, double b) { return sigmoid(a * theta - b); }

void check_binary(const IntMat &responses) {
  for (Eigen::Index i = 0; i < responses.rows(); ++i)
    for (Eigen::Index j = 0; j < responses.cols(); ++j)
      if (responses(i, j) != 0 && responses(i, j) != 1)
        throw InvalidArgument("irt: response at row " + std::to_string(i) + ", item " +
                              std::to_string(j) + " is not 0/1");
}

Vec person_loglik(const IrtParams &params, const IntMat &responses, const QuadratureRule &quad) {
  params.validate();
  if (responses.cols() != params.items()) throw InvalidArgument("irt: item count mismatch");
  check_binary(responses);
  const Mat lw = node_log_lik(params, responses, quad);
  Vec out(lw.rows());
  for (Eigen::Index i = 0; i < lw.rows(); ++i) out[i] = log_sum_exp(Vec(lw.row(i).transpose()));
  return out;
}

double marginal_loglik(const IrtParams &params, const IntMat &responses, const QuadratureRule &quad) {
  return person_loglik(params, responses, quad).sum();
}

ThetaPosterior posterior_theta(const IrtParams &params, const IntVec &responses,
                               const QuadratureRule &quad) {
  const IntMat row = responses.transpose();
  params.validate();
  if (row.cols() != params.items()) throw InvalidArgument("irt: item count mismatch");
  check_binary(row);
  const Mat lw = node_log_lik(params, row, quad);
  ThetaPosterior out;
  out.node_weights = Simplex::from_log(lw.row(0).transpose());
  const Vec &w = out.node_weights.probs();
  out.eap = w.dot(quad.nodes);
  const double second = w.dot(quad.nodes.cwiseProduct(quad.nodes));
  out.sd = std::sqrt(std::max(second - out.eap * out.eap, 0.0));
  return out;
}

std::pair<IrtParams, FitReport> fit_irt(const IntMat &responses, const QuadratureRule &quad,
                                        const EmConfig &cfg, const IrtFitOptions &options) {
  check_binary(responses);
  const auto n = responses.rows();
  const auto j = responses.cols();
  if (n < 2 || j < 1) throw InvalidArgument("irt: need at least two persons and one item");
  IrtParams start;
  start.a = Vec::Ones(j);
  start.b = Vec::Zero(j);
  for (Eigen::Index k = 0; k < j; ++k) {
    const double p = responses.col(k).cast<double>().mean();
    if (p == 0.0 || p == 1.0)
      throw InvalidArgument("irt: item " + std::to_string(k) + " has constant responses");
    start.b[k] = -std::log(p / (1.0 - p)) * std::sqrt(1.0 + std::numbers::pi / 8.0);
  }
  if (options.init) {
    start = *options.init;
    start.validate();
    if (start.items() != j) throw InvalidArgument("irt: initial parameters have the wrong item count");
    if (start.a.minCoeff() <= 0.0) throw InvalidArgument("irt: discrimination must be positive");
  }
  EmConfig local = cfg;
  local.monotone_slack = std::max(cfg.monotone_slack, 1e-6);
  IrtEm model{responses, quad, options.estimate_discrimination};
  return run_em(model, std::move(start), local);
}

}  // namespace latentlab::irt
