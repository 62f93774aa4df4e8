#include "latentlab/core.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdlib>
#include <numbers>
#include <thread>

namespace latentlab {

namespace {

constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

bool all_finite(const Mat &m) { return m.allFinite(); }

}  // namespace

Gaussian::Gaussian(Vec m, Mat c) : mean(std::move(m)), cov(std::move(c)) {
  if (cov.rows() != mean.size() || cov.cols() != mean.size())
    throw InvalidArgument("Gaussian: covariance shape does not match mean");
  if (!mean.allFinite() || !all_finite(cov))
    throw InvalidArgument("Gaussian: non-finite parameters");
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw InvalidArgument("Gaussian: covariance is not symmetric");
}

Gaussian Gaussian::standard(Eigen::Index d) {
  return Gaussian(Vec::Zero(d), Mat::Identity(d, d));
}

Simplex::Simplex(Vec p) : probs_(std::move(p)) {
  if (probs_.size() == 0) throw InvalidArgument("Simplex: empty");
  if (!probs_.allFinite() || probs_.minCoeff() < 0.0)
    throw InvalidArgument("Simplex: negative or non-finite entry");
  if (std::abs(probs_.sum() - 1.0) > 1e-12)
    throw InvalidArgument("Simplex: entries do not sum to 1");
}

Simplex Simplex::normalized(Vec weights) {
  weights = weights.cwiseMax(0.0);
  const double total = weights.sum();
  if (!(total > 0.0) || !std::isfinite(total))
    throw InvalidArgument("Simplex::normalized: zero or non-finite total mass");
  weights /= total;
  return Simplex(std::move(weights));
}

Simplex Simplex::uniform(Eigen::Index k) {
  return Simplex(Vec::Constant(k, 1.0 / static_cast<double>(k)));
}

Simplex Simplex::from_log(const Vec &log_weights) {
  const double lse = log_sum_exp(log_weights);
  if (!std::isfinite(lse)) throw NumericError("Simplex::from_log: all weights are zero");
  Vec p = (log_weights.array() - lse).exp();
  p /= p.sum();
  return Simplex(std::move(p));
}

std::uint64_t RandomSource::next_u64() {
  ++counter_;
  return mix64(seed_ + counter_ * kGoldenGamma);
}

double RandomSource::uniform() {
  // (k + 0.5) / 2^53 never hits either endpoint.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RandomSource::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(angle);
  has_spare_ = true;
  return r * std::cos(angle);
}

Vec RandomSource::normal_vec(Eigen::Index n) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
  return v;
}

double RandomSource::gamma(double shape) {
  if (!(shape > 0.0)) throw InvalidArgument("gamma: shape must be positive");
  if (shape < 1.0) {
    const double g = gamma(shape + 1.0);
    return g * std::pow(uniform(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::uint64_t RandomSource::below(std::uint64_t n) {
  if (n == 0) throw InvalidArgument("below: empty range");
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r < limit) return r % n;
  }
}

RandomSource RandomSource::fork(std::uint64_t stream) const {
  return RandomSource(mix64(seed_ ^ mix64(stream + kGoldenGamma)));
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw InvalidArgument("log_sum_exp: empty input");
  const double m = *std::max_element(v.begin(), v.end());
  if (m == kNegInf) return kNegInf;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

double log_sum_exp(const Vec &v) { return log_sum_exp(std::span<const double>(v.data(), v.size())); }

Mat cholesky_with_jitter(const Mat &cov) {
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  const auto d = cov.rows();
  const double jitter = 1e-9 * cov.trace() / static_cast<double>(d);
  if (jitter > 0.0) {
    Mat bumped = cov;
    bumped.diagonal().array() += jitter;
    llt.compute(bumped);
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  throw NumericError("covariance is not positive definite after jitter");
}

GaussianDensity::GaussianDensity(const Gaussian &g)
    : mean_(g.mean), chol_(cholesky_with_jitter(g.cov)) {
  log_det_ = 2.0 * chol_.diagonal().array().log().sum();
}

double GaussianDensity::logpdf(const Eigen::Ref<const Vec> &x) const {
  if (x.size() != mean_.size()) throw InvalidArgument("gaussian_logpdf: dimension mismatch");
  const Vec z = chol_.triangularView<Eigen::Lower>().solve(x - mean_);
  return -0.5 * (static_cast<double>(mean_.size()) * kLog2Pi + log_det_ + z.squaredNorm());
}

double gaussian_logpdf(const Vec &x, const Gaussian &g) { return GaussianDensity(g).logpdf(x); }

Gaussian gaussian_condition(const Gaussian &joint, Eigen::Index size_a, const Vec &observed_b) {
  const auto n = joint.dim();
  const auto size_b = n - size_a;
  if (size_a <= 0 || size_b <= 0 || observed_b.size() != size_b)
    throw InvalidArgument("gaussian_condition: bad block sizes");
  const Mat saa = joint.cov.topLeftCorner(size_a, size_a);
  const Mat sab = joint.cov.topRightCorner(size_a, size_b);
  const Mat sbb = joint.cov.bottomRightCorner(size_b, size_b);
  Eigen::LDLT<Mat> ldlt(sbb);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().cwiseAbs().minCoeff() <= 1e-14 * ldlt.vectorD().cwiseAbs().maxCoeff())
    throw NumericError("gaussian_condition: observed block covariance is singular");
  const Vec shift = ldlt.solve(observed_b - joint.mean.tail(size_b));
  Vec mean = joint.mean.head(size_a) + sab * shift;
  Mat cov = saa - sab * ldlt.solve(Mat(sab.transpose()));
  return Gaussian(std::move(mean), symmetrize(cov));
}

Vec sample_gaussian(const Gaussian &g, RandomSource &rng, Jitter jitter) {
  const Vec eps = rng.normal_vec(g.dim());
  Eigen::LLT<Mat> llt(g.cov);
  if (llt.info() == Eigen::Success) return g.mean + Mat(llt.matrixL()) * eps;
  if (jitter == Jitter::enabled) {
    try {
      return g.mean + cholesky_with_jitter(g.cov) * eps;
    } catch (const NumericError &) {
      // fall through to the semi-definite factorization
    }
  }
  Eigen::LDLT<Mat> ldlt(g.cov);
  const Vec dvec = ldlt.vectorD();
  const double scale = std::max(1.0, g.cov.cwiseAbs().maxCoeff());
  if (ldlt.info() != Eigen::Success || dvec.minCoeff() < -1e-12 * scale)
    throw NumericError("sample_gaussian: covariance is not positive semi-definite");
  Vec y = dvec.cwiseMax(0.0).cwiseSqrt().cwiseProduct(eps);
  y = ldlt.matrixL() * y;
  return g.mean + ldlt.transpositionsP().transpose() * y;
}

Eigen::Index sample_categorical(const Simplex &p, RandomSource &rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  Eigen::Index last_positive = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    acc += p[i];
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;
}

Simplex sample_dirichlet(const Vec &alpha, RandomSource &rng) {
  if (alpha.size() == 0 || !(alpha.minCoeff() > 0.0))
    throw InvalidArgument("sample_dirichlet: concentration must be positive");
  Vec g(alpha.size());
  for (Eigen::Index i = 0; i < alpha.size(); ++i) g[i] = rng.gamma(alpha[i]);
  return Simplex::normalized(std::move(g));
}

double kl_divergence_categorical(const Simplex &q, const Simplex &p) {
  if (q.size() != p.size()) throw InvalidArgument("kl_divergence_categorical: size mismatch");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    if (q[i] == 0.0) continue;
    if (p[i] == 0.0) return std::numeric_limits<double>::infinity();
    kl += q[i] * std::log(q[i] / p[i]);
  }
  return std::max(kl, 0.0);
}

double entropy(const Simplex &p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  return h;
}

double cross_entropy(const Simplex &q, const Simplex &p) {
  if (q.size() != p.size()) throw InvalidArgument("cross_entropy: size mismatch");
  double h = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    if (q[i] == 0.0) continue;
    if (p[i] == 0.0) return std::numeric_limits<double>::infinity();
    h -= q[i] * std::log(p[i]);
  }
  return h;
}

std::vector<Eigen::Index> shuffled_indices(Eigen::Index n, RandomSource &rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return idx;
}

Mat gather_rows(const Mat &x, const std::vector<Eigen::Index> &idx) {
  Mat out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

Vec column_mean(const Mat &x) { return x.colwise().mean().transpose(); }

Mat sample_covariance(const Mat &x) {
  const Vec mu = column_mean(x);
  const Mat centered = x.rowwise() - mu.transpose();
  return symmetrize(centered.transpose() * centered / static_cast<double>(x.rows()));
}

Mat symmetrize(const Mat &m) { return 0.5 * (m + m.transpose()); }

Mat clamp_eigenvalues(const Mat &m, double floor) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
  if (es.eigenvalues().minCoeff() >= floor) return symmetrize(m);
  const Vec vals = es.eigenvalues().cwiseMax(floor);
  return symmetrize(es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose());
}

unsigned worker_count() {
  if (const char *env = std::getenv("LATENTLAB_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)> &body) {
  const std::size_t workers = std::min<std::size_t>(worker_count(), n);
  if (workers <= 1 || n < 64) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
}

}  // namespace latentlab
