#include "latentlab/ppca.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>
#include <vector>

namespace latentlab::ppca {

namespace {

constexpr double kSigma2Floor = 1e-12;

void check_data(const Mat &data, Eigen::Index latent_dim) {
  if (!data.allFinite()) throw InvalidArgument("ppca: data contains non-finite values");
  if (latent_dim < 1) throw InvalidArgument("ppca: latent dimension must be >= 1");
  if (latent_dim >= data.cols())
    throw InvalidArgument("ppca: latent dimension must be smaller than the data dimension");
  if (data.rows() <= latent_dim) throw InvalidArgument("ppca: need more rows than latent dims");
}

// Scatter of the rows about an arbitrary centre, divided by N.
Mat scatter_about(const Mat &data, const Vec &centre) {
  const Mat centered = data.rowwise() - centre.transpose();
  return symmetrize(centered.transpose() * centered / static_cast<double>(data.rows()));
}

struct EmModel {
  using Params = PpcaParams;
  struct Posterior {
    Mat SW;    // S W
    Mat Minv;  // (W^T W + sigma2 I)^{-1}
  };

  const Mat &data;
  Mat S;

  Posterior e_step(const Params &p) const {
    const auto m = p.latent_dim();
    const Mat M = p.W.transpose() * p.W + p.sigma2 * Mat::Identity(m, m);
    return {S * p.W, M.ldlt().solve(Mat::Identity(m, m))};
  }

  Params m_step(const Posterior &q, const Params &p, EmEvents &) const {
    const auto m = p.latent_dim();
    const Mat inner = p.sigma2 * Mat::Identity(m, m) + q.Minv * p.W.transpose() * q.SW;
    Params next = p;
    next.W = inner.transpose().partialPivLu().solve(q.SW.transpose()).transpose();
    const double resid = S.trace() - (q.SW * q.Minv * next.W.transpose()).trace();
    next.sigma2 = std::max(resid / static_cast<double>(p.data_dim()), kSigma2Floor);
    return next;
  }

  double objective(const Params &p) const { return log_likelihood(p, data); }
};

}  // namespace

Mat PpcaParams::marginal_cov() const {
  Mat c = W * W.transpose();
  c.diagonal().array() += sigma2;
  return symmetrize(c);
}

Gaussian PpcaParams::marginal() const { return Gaussian(mu, marginal_cov()); }

void PpcaParams::validate() const {
  if (mu.size() != W.rows()) throw InvalidArgument("PpcaParams: mu/W dimension mismatch");
  if (W.cols() > W.rows()) throw InvalidArgument("PpcaParams: latent dim exceeds data dim");
  if (!(sigma2 >= 0.0) || !W.allFinite() || !mu.allFinite())
    throw InvalidArgument("PpcaParams: invalid values");
}

PpcaParams fit_closed_form(const Mat &data, Eigen::Index latent_dim) {
  check_data(data, latent_dim);
  const auto d = data.cols();
  PpcaParams p;
  p.mu = column_mean(data);
  const Mat S = scatter_about(data, p.mu);
  Eigen::SelfAdjointEigenSolver<Mat> es(S);
  // Eigen sorts ascending; flip to descending.
  const Vec vals = es.eigenvalues().reverse();
  const Mat vecs = es.eigenvectors().rowwise().reverse();
  if (!(vals[latent_dim - 1] > 1e-12 * std::max(vals[0], 1e-300)))
    throw NumericError("ppca: covariance rank is smaller than the latent dimension");
  p.sigma2 = std::max(vals.tail(d - latent_dim).mean(), kSigma2Floor);
  const Vec scale = (vals.head(latent_dim).array() - p.sigma2).max(0.0).sqrt();
  p.W = vecs.leftCols(latent_dim) * scale.asDiagonal();
  return canonicalize(std::move(p));
}

double log_likelihood(const PpcaParams &params, const Mat &data) {
  params.validate();
  if (data.cols() != params.data_dim()) throw InvalidArgument("ppca: data dimension mismatch");
  const Mat L = cholesky_with_jitter(params.marginal_cov());
  const double logdet = 2.0 * L.diagonal().array().log().sum();
  const Mat centered = (data.rowwise() - params.mu.transpose()).transpose();
  const Mat z = L.triangularView<Eigen::Lower>().solve(centered);
  const auto n = static_cast<double>(data.rows());
  const auto d = static_cast<double>(data.cols());
  return -0.5 * (n * (d * kLog2Pi + logdet) + z.squaredNorm());
}

PpcaPosterior posterior(const PpcaParams &params, const Vec &x) {
  if (x.size() != params.data_dim()) throw InvalidArgument("ppca: observation dimension mismatch");
  const auto m = params.latent_dim();
  const Mat M = params.W.transpose() * params.W + params.sigma2 * Mat::Identity(m, m);
  const Mat Minv = M.ldlt().solve(Mat::Identity(m, m));
  return {Minv * params.W.transpose() * (x - params.mu), symmetrize(params.sigma2 * Minv)};
}

Vec reconstruct(const PpcaParams &params, const Vec &x) {
  return params.W * posterior(params, x).mean + params.mu;
}

Mat sample(const PpcaParams &params, Eigen::Index n, RandomSource &rng, SampleFrom from,
           const std::optional<Vec> &given) {
  params.validate();
  const auto d = params.data_dim();
  const auto m = params.latent_dim();
  std::optional<Gaussian> latent;
  if (from == SampleFrom::posterior) {
    if (!given) throw InvalidArgument("ppca::sample: posterior mode needs an observation");
    auto post = posterior(params, *given);
    latent = Gaussian(std::move(post.mean), std::move(post.cov));
  }
  const double noise_sd = std::sqrt(params.sigma2);
  Mat out(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec z = latent ? sample_gaussian(*latent, rng, Jitter::disabled) : rng.normal_vec(m);
    out.row(i) = (params.W * z + params.mu + noise_sd * rng.normal_vec(d)).transpose();
  }
  return out;
}

std::pair<PpcaParams, FitReport> fit_em(const Mat &data, Eigen::Index latent_dim,
                                        const EmConfig &cfg, std::optional<PpcaParams> init) {
  check_data(data, latent_dim);
  EmModel model{data, {}};
  const Vec mu = column_mean(data);
  model.S = scatter_about(data, mu);
  PpcaParams start;
  if (init) {
    start = *init;
    start.mu = mu;
  } else {
    RandomSource rng(cfg.seed);
    start.mu = mu;
    start.W = Mat(data.cols(), latent_dim);
    for (Eigen::Index i = 0; i < start.W.size(); ++i) start.W.data()[i] = std::sqrt(0.1) * rng.normal();
    start.sigma2 = std::max(0.5 * model.S.trace() / static_cast<double>(data.cols()), kSigma2Floor);
  }
  auto [params, report] = run_em(model, std::move(start), cfg);
  return {canonicalize(std::move(params)), std::move(report)};
}

PpcaParams canonicalize(PpcaParams params) {
  const auto m = params.latent_dim();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return params.W.col(a).norm() > params.W.col(b).norm();
  });
  Mat sorted(params.W.rows(), m);
  for (Eigen::Index j = 0; j < m; ++j) {
    Vec col = params.W.col(order[static_cast<std::size_t>(j)]);
    Eigen::Index arg = 0;
    col.cwiseAbs().maxCoeff(&arg);
    if (col[arg] < 0.0) col = -col;
    sorted.col(j) = col;
  }
  params.W = std::move(sorted);
  return params;
}

}  // namespace latentlab::ppca
