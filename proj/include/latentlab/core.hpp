// Shared numerical primitives: dense matrices, Gaussians, simplexes,
// log-domain helpers and the deterministic random source used by every
// model family in latentlab.

#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace latentlab {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using IntMat = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IntVec = Eigen::VectorXi;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLog2Pi = 1.8378770664093454836;

/// Raised when a computation cannot produce a finite, well-defined result
/// (non-PSD covariance, zero-probability sequence, diverged training run).
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Raised for malformed inputs: shape mismatches, out-of-range codes,
/// invalid hyperparameters.
class InvalidArgument : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

struct Gaussian {
  Vec mean;
  Mat cov;

  Gaussian() = default;
  Gaussian(Vec m, Mat c);

  [[nodiscard]] Eigen::Index dim() const { return mean.size(); }
  [[nodiscard]] static Gaussian standard(Eigen::Index d);
};

/// Probability vector. Entries are non-negative and sum to one within 1e-12.
class Simplex {
public:
  Simplex() = default;
  /// Validates; throws InvalidArgument if `p` is not a simplex.
  explicit Simplex(Vec p);

  /// Clamps negatives to zero and rescales. Throws if the total mass is zero.
  [[nodiscard]] static Simplex normalized(Vec weights);
  [[nodiscard]] static Simplex uniform(Eigen::Index k);
  /// Normalizes exp(log_weights) stably.
  [[nodiscard]] static Simplex from_log(const Vec &log_weights);

  [[nodiscard]] const Vec &probs() const noexcept { return probs_; }
  [[nodiscard]] double operator[](Eigen::Index i) const { return probs_[i]; }
  [[nodiscard]] Eigen::Index size() const noexcept { return probs_.size(); }

private:
  Vec probs_;
};

/// Counter-based SplitMix64 stream. The k-th 64-bit output is a fixed
/// bijective mix of seed + k * golden-gamma, so draws depend only on
/// (seed, position) and are identical on every platform.
class RandomSource {
public:
  static constexpr std::string_view kAlgorithm = "splitmix64";

  explicit RandomSource(std::uint64_t seed = 0) : seed_(seed) {}

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform();
  double normal();
  Vec normal_vec(Eigen::Index n);
  /// Gamma(shape, 1) by Marsaglia–Tsang with the shape<1 boost.
  double gamma(double shape);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Independent child stream derived from this stream's seed and `stream`.
  [[nodiscard]] RandomSource fork(std::uint64_t stream) const;

private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Stable log(sum(exp(v))). Throws on empty input; returns -inf iff every
/// entry is -inf.
[[nodiscard]] double log_sum_exp(std::span<const double> v);
[[nodiscard]] double log_sum_exp(const Vec &v);

/// Lower Cholesky factor of a covariance. Plain factorization is tried first;
/// on failure 1e-9 * trace / d is added to the diagonal once. Throws
/// NumericError when the matrix is still not positive definite.
[[nodiscard]] Mat cholesky_with_jitter(const Mat &cov);

[[nodiscard]] double gaussian_logpdf(const Vec &x, const Gaussian &g);

/// Gaussian with its Cholesky factor cached for repeated density evaluation.
class GaussianDensity {
public:
  explicit GaussianDensity(const Gaussian &g);
  [[nodiscard]] double logpdf(const Eigen::Ref<const Vec> &x) const;
  [[nodiscard]] double log_det() const noexcept { return log_det_; }

private:
  Vec mean_;
  Mat chol_;
  double log_det_ = 0.0;
};

/// Conditions a joint Gaussian over (a, b), where a is the leading
/// `size_a` coordinates, on b = observed_b. Returns the distribution of a.
[[nodiscard]] Gaussian gaussian_condition(const Gaussian &joint, Eigen::Index size_a,
                                          const Vec &observed_b);

enum class Jitter { enabled, disabled };

/// Draws mean + L eps with L a square-root factor of cov. With jitter
/// disabled, semi-definite covariances are factored by LDLT so a zero
/// covariance returns the mean exactly.
[[nodiscard]] Vec sample_gaussian(const Gaussian &g, RandomSource &rng,
                                  Jitter jitter = Jitter::enabled);
[[nodiscard]] Eigen::Index sample_categorical(const Simplex &p, RandomSource &rng);
[[nodiscard]] Simplex sample_dirichlet(const Vec &alpha, RandomSource &rng);

/// KL(q || p) in nats. Returns +inf when q puts mass where p has none.
[[nodiscard]] double kl_divergence_categorical(const Simplex &q, const Simplex &p);
[[nodiscard]] double entropy(const Simplex &p);
/// H(q, p) = -sum q log p; +inf on support violation.
[[nodiscard]] double cross_entropy(const Simplex &q, const Simplex &p);

/// Indices 0..n-1 in a seeded Fisher-Yates order.
[[nodiscard]] std::vector<Eigen::Index> shuffled_indices(Eigen::Index n, RandomSource &rng);
/// Rows of x selected by `idx`, in order.
[[nodiscard]] Mat gather_rows(const Mat &x, const std::vector<Eigen::Index> &idx);

[[nodiscard]] Vec column_mean(const Mat &x);
/// Maximum-likelihood (divide-by-N) covariance of the rows of x.
[[nodiscard]] Mat sample_covariance(const Mat &x);
[[nodiscard]] Mat symmetrize(const Mat &m);
/// Eigenvalue floor: returns the symmetric matrix with eigenvalues clamped
/// from below at `floor`.
[[nodiscard]] Mat clamp_eigenvalues(const Mat &m, double floor);

[[nodiscard]] inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
[[nodiscard]] inline double log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

/// Number of workers for data-parallel loops: LATENTLAB_THREADS when set,
/// else the hardware concurrency.
[[nodiscard]] unsigned worker_count();

/// Runs body(i) for i in [0, n) across worker_count() threads. Bodies must
/// only write to disjoint state.
void parallel_for(std::size_t n, const std::function<void(std::size_t)> &body);

}  // namespace latentlab
