#include "latentlab/mixture.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

namespace latentlab::mixture {

namespace {

constexpr double kEmptyCount = 1e-8;
constexpr double kProbFloor = 1e-10;

std::vector<GaussianDensity> densities_of(const GmmParams &p) {
  std::vector<GaussianDensity> out;
  out.reserve(p.means.size());
  for (std::size_t k = 0; k < p.means.size(); ++k) out.emplace_back(Gaussian(p.means[k], p.covs[k]));
  return out;
}

Vec log_weights_of(const Simplex &w) { return w.probs().array().log(); }

// log pi_k + log N(x | mu_k, Sigma_k) for every k.
Vec gmm_log_joint(const std::vector<GaussianDensity> &dens, const Vec &log_w,
                  const Eigen::Ref<const Vec> &x) {
  Vec out(log_w.size());
  for (Eigen::Index k = 0; k < log_w.size(); ++k)
    out[k] = log_w[k] + dens[static_cast<std::size_t>(k)].logpdf(x);
  return out;
}

void check_dim(const GmmParams &p, const Mat &data) {
  p.validate();
  if (data.cols() != p.dim()) throw InvalidArgument("gmm: data dimension does not match parameters");
}

Vec lca_log_joint(const LcaParams &p, const IntMat &data, Eigen::Index row) {
  Vec out = log_weights_of(p.weights);
  for (Eigen::Index k = 0; k < p.k(); ++k) {
    const auto &tables = p.item_probs[static_cast<std::size_t>(k)];
    for (Eigen::Index j = 0; j < data.cols(); ++j)
      out[k] += std::log(tables[static_cast<std::size_t>(j)][data(row, j)]);
  }
  return out;
}

struct GmmEm {
  using Params = GmmParams;
  using Posterior = Responsibilities;
  const Mat &data;
  double floor;

  Posterior e_step(const Params &p) const { return gmm_e_step(p, data); }
  Params m_step(const Posterior &q, const Params &, EmEvents &events) const {
    return gmm_m_step(data, q, floor, &events);
  }
  double objective(const Params &p) const { return gmm_loglik(p, data); }
};

struct LcaEm {
  using Params = LcaParams;
  using Posterior = Responsibilities;
  const IntMat &data;
  const std::vector<int> &categories;

  Posterior e_step(const Params &p) const { return lca_e_step(p, data); }
  Params m_step(const Posterior &q, const Params &, EmEvents &events) const {
    return lca_m_step(data, categories, q, &events);
  }
  double objective(const Params &p) const { return lca_loglik(p, data); }
};

// Rows with the lowest likelihood, one per empty component, never reused.
Eigen::Index worst_unused_row(const Vec &point_loglik, std::vector<Eigen::Index> &used) {
  Eigen::Index best = -1;
  for (Eigen::Index i = 0; i < point_loglik.size(); ++i) {
    if (std::find(used.begin(), used.end(), i) != used.end()) continue;
    if (best < 0 || point_loglik[i] < point_loglik[best]) best = i;
  }
  if (best < 0) best = 0;
  used.push_back(best);
  return best;
}

}  // namespace

void GmmParams::validate() const {
  const auto kk = static_cast<std::size_t>(k());
  if (kk == 0 || means.size() != kk || covs.size() != kk)
    throw InvalidArgument("GmmParams: component count mismatch");
  for (std::size_t i = 0; i < kk; ++i) {
    if (means[i].size() != dim() || covs[i].rows() != dim() || covs[i].cols() != dim())
      throw InvalidArgument("GmmParams: component dimension mismatch");
  }
}

std::vector<int> LcaParams::categories() const {
  std::vector<int> out;
  if (item_probs.empty()) return out;
  for (const auto &s : item_probs.front()) out.push_back(static_cast<int>(s.size()));
  return out;
}

void LcaParams::validate() const {
  if (k() == 0 || static_cast<Eigen::Index>(item_probs.size()) != k())
    throw InvalidArgument("LcaParams: class count mismatch");
  const auto cats = categories();
  for (const auto &tables : item_probs) {
    if (tables.size() != cats.size()) throw InvalidArgument("LcaParams: item count mismatch");
    for (std::size_t j = 0; j < tables.size(); ++j)
      if (tables[j].size() != cats[j]) throw InvalidArgument("LcaParams: category count mismatch");
  }
}

double covariance_floor(const Mat &data) {
  const double global_var = sample_covariance(data).trace() / static_cast<double>(data.cols());
  return 1e-6 * (global_var > 0.0 ? global_var : 1.0);
}

Simplex gmm_posterior(const GmmParams &params, const Vec &x) {
  if (x.size() != params.dim()) throw InvalidArgument("gmm: observation dimension mismatch");
  return Simplex::from_log(gmm_log_joint(densities_of(params), log_weights_of(params.weights), x));
}

double gmm_loglik(const GmmParams &params, const Mat &data) {
  return gmm_e_step(params, data).point_loglik.sum();
}

Responsibilities gmm_e_step(const GmmParams &params, const Mat &data) {
  check_dim(params, data);
  const auto dens = densities_of(params);
  const Vec log_w = log_weights_of(params.weights);
  Responsibilities r{Mat(data.rows(), params.k()), Vec(data.rows())};
  parallel_for(static_cast<std::size_t>(data.rows()), [&](std::size_t i) {
    const auto row = static_cast<Eigen::Index>(i);
    const Vec lj = gmm_log_joint(dens, log_w, data.row(row).transpose());
    r.point_loglik[row] = log_sum_exp(lj);
    r.gamma.row(row) = Simplex::from_log(lj).probs().transpose();
  });
  return r;
}

GmmParams gmm_m_step(const Mat &data, const Responsibilities &resp, double cov_floor,
                     EmEvents *events) {
  const auto n = data.rows();
  const auto kk = resp.gamma.cols();
  if (resp.gamma.rows() != n) throw InvalidArgument("gmm_m_step: responsibility shape mismatch");
  const Vec counts = resp.gamma.colwise().sum().transpose();
  Vec weights(kk);
  std::vector<Vec> means(static_cast<std::size_t>(kk));
  std::vector<Mat> covs(static_cast<std::size_t>(kk));
  std::vector<Eigen::Index> used;
  for (Eigen::Index k = 0; k < kk; ++k) {
    const auto kk_ = static_cast<std::size_t>(k);
    if (counts[k] < kEmptyCount) {
      const Eigen::Index row = resp.point_loglik.size() == n ? worst_unused_row(resp.point_loglik, used) : 0;
      means[kk_] = data.row(row).transpose();
      covs[kk_] = clamp_eigenvalues(sample_covariance(data), cov_floor);
      weights[k] = 1.0 / static_cast<double>(n);
      if (events)
        events->record("component " + std::to_string(k) + " re-seeded at row " + std::to_string(row));
      continue;
    }
    const Vec g = resp.gamma.col(k);
    means[kk_] = data.transpose() * g / counts[k];
    const Mat centered = data.rowwise() - means[kk_].transpose();
    const Mat cov = centered.transpose() * g.asDiagonal() * centered / counts[k];
    covs[kk_] = clamp_eigenvalues(cov, cov_floor);
    weights[k] = counts[k] / static_cast<double>(n);
  }
  return {Simplex::normalized(weights), std::move(means), std::move(covs)};
}

GmmParams gmm_init(const Mat &data, Eigen::Index k, RandomSource &rng) {
  const auto n = data.rows();
  if (k < 1 || n < k) throw InvalidArgument("gmm: need at least K rows");
  std::vector<Eigen::Index> chosen{static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)))};
  Vec nearest = (data.rowwise() - data.row(chosen[0])).rowwise().squaredNorm();
  while (static_cast<Eigen::Index>(chosen.size()) < k) {
    Eigen::Index far = 0;
    nearest.maxCoeff(&far);
    chosen.push_back(far);
    nearest = nearest.cwiseMin((data.rowwise() - data.row(far)).rowwise().squaredNorm());
  }
  const Mat global = clamp_eigenvalues(sample_covariance(data), covariance_floor(data));
  GmmParams p{Simplex::uniform(k), {}, {}};
  for (auto row : chosen) {
    p.means.push_back(data.row(row).transpose());
    p.covs.push_back(global);
  }
  return p;
}

std::pair<GmmParams, FitReport> fit_gmm(const Mat &data, Eigen::Index k, const EmConfig &cfg,
                                        std::optional<GmmParams> init) {
  if (!data.allFinite()) throw InvalidArgument("gmm: data contains non-finite values");
  RandomSource rng(cfg.seed);
  GmmParams start = init ? std::move(*init) : gmm_init(data, k, rng);
  check_dim(start, data);
  GmmEm model{data, covariance_floor(data)};
  return run_em(model, std::move(start), cfg);
}

void check_codes(const IntMat &data, const std::vector<int> &categories) {
  if (static_cast<std::size_t>(data.cols()) != categories.size())
    throw InvalidArgument("lca: item count does not match category declaration");
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
      const int c = data(i, j);
      if (c < 0 || c >= categories[static_cast<std::size_t>(j)]) {
        std::ostringstream os;
        os << "lca: category " << c << " out of range at row " << i << ", item " << j;
        throw InvalidArgument(os.str());
      }
    }
  }
}

std::vector<int> infer_categories(const IntMat &data) {
  std::vector<int> out;
  for (Eigen::Index j = 0; j < data.cols(); ++j) out.push_back(std::max(1, data.col(j).maxCoeff() + 1));
  return out;
}

Simplex lca_posterior(const LcaParams &params, const IntMat &data, Eigen::Index row) {
  return Simplex::from_log(lca_log_joint(params, data, row));
}

double lca_loglik(const LcaParams &params, const IntMat &data) {
  return lca_e_step(params, data).point_loglik.sum();
}

Responsibilities lca_e_step(const LcaParams &params, const IntMat &data) {
  params.validate();
  check_codes(data, params.categories());
  Responsibilities r{Mat(data.rows(), params.k()), Vec(data.rows())};
  parallel_for(static_cast<std::size_t>(data.rows()), [&](std::size_t i) {
    const auto row = static_cast<Eigen::Index>(i);
    const Vec lj = lca_log_joint(params, data, row);
    r.point_loglik[row] = log_sum_exp(lj);
    r.gamma.row(row) = Simplex::from_log(lj).probs().transpose();
  });
  return r;
}

LcaParams lca_m_step(const IntMat &data, const std::vector<int> &categories,
                     const Responsibilities &resp, EmEvents *events) {
  const auto n = data.rows();
  const auto kk = resp.gamma.cols();
  const Vec counts = resp.gamma.colwise().sum().transpose();
  LcaParams p;
  Vec weights(kk);
  std::vector<Eigen::Index> used;
  for (Eigen::Index k = 0; k < kk; ++k) {
    std::vector<Simplex> tables;
    if (counts[k] < kEmptyCount) {
      const Eigen::Index row = resp.point_loglik.size() == n ? worst_unused_row(resp.point_loglik, used) : 0;
      for (std::size_t j = 0; j < categories.size(); ++j) {
        Vec t = Vec::Constant(categories[j], kProbFloor);
        t[data(row, static_cast<Eigen::Index>(j))] = 1.0;
        tables.push_back(Simplex::normalized(t));
      }
      weights[k] = 1.0 / static_cast<double>(n);
      if (events)
        events->record("class " + std::to_string(k) + " re-seeded at row " + std::to_string(row));
    } else {
      for (std::size_t j = 0; j < categories.size(); ++j) {
        Vec t = Vec::Zero(categories[j]);
        for (Eigen::Index i = 0; i < n; ++i) t[data(i, static_cast<Eigen::Index>(j))] += resp.gamma(i, k);
        t = (t / counts[k]).cwiseMax(kProbFloor);
        tables.push_back(Simplex::normalized(t));
      }
      weights[k] = counts[k] / static_cast<double>(n);
    }
    p.item_probs.push_back(std::move(tables));
  }
  p.weights = Simplex::normalized(weights);
  return p;
}

LcaParams lca_init(const IntMat &data, const std::vector<int> &categories, Eigen::Index k,
                   RandomSource &rng) {
  check_codes(data, categories);
  if (k < 1 || data.rows() < k) throw InvalidArgument("lca: need at least K rows");
  LcaParams p;
  p.weights = Simplex::uniform(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    std::vector<Simplex> tables;
    for (std::size_t j = 0; j < categories.size(); ++j) {
      Vec freq = Vec::Zero(categories[j]);
      for (Eigen::Index i = 0; i < data.rows(); ++i) freq[data(i, static_cast<Eigen::Index>(j))] += 1.0;
      freq /= static_cast<double>(data.rows());
      for (Eigen::Index v = 0; v < freq.size(); ++v) freq[v] *= 1.0 + 0.1 * (2.0 * rng.uniform() - 1.0);
      tables.push_back(Simplex::normalized(freq.cwiseMax(kProbFloor)));
    }
    p.item_probs.push_back(std::move(tables));
  }
  return p;
}

std::pair<LcaParams, FitReport> fit_lca(const IntMat &data, const std::vector<int> &categories,
                                        Eigen::Index k, const EmConfig &cfg,
                                        std::optional<LcaParams> init) {
  RandomSource rng(cfg.seed);
  LcaParams start = init ? std::move(*init) : lca_init(data, categories, k, rng);
  start.validate();
  check_codes(data, start.categories());
  LcaEm model{data, categories};
  return run_em(model, std::move(start), cfg);
}

namespace {

template <class Key>
std::vector<Eigen::Index> sorted_order(Eigen::Index k, Key key) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return key(a) < key(b); });
  return order;
}

Simplex permuted(const Simplex &w, const std::vector<Eigen::Index> &order) {
  Vec p(w.size());
  for (std::size_t i = 0; i < order.size(); ++i) p[static_cast<Eigen::Index>(i)] = w[order[i]];
  return Simplex(p);
}

}  // namespace

GmmParams canonicalize(const GmmParams &params) {
  params.validate();
  const auto order = sorted_order(params.k(), [&](Eigen::Index c) {
    const Vec &m = params.means[static_cast<std::size_t>(c)];
    return std::vector<double>(m.data(), m.data() + m.size());
  });
  GmmParams out{permuted(params.weights, order), {}, {}};
  for (auto c : order) {
    out.means.push_back(params.means[static_cast<std::size_t>(c)]);
    out.covs.push_back(params.covs[static_cast<std::size_t>(c)]);
  }
  return out;
}

LcaParams canonicalize(const LcaParams &params) {
  params.validate();
  const auto order = sorted_order(params.k(), [&](Eigen::Index c) {
    std::vector<double> flat;
    for (const auto &t : params.item_probs[static_cast<std::size_t>(c)])
      flat.insert(flat.end(), t.probs().data(), t.probs().data() + t.size());
    return flat;
  });
  LcaParams out{permuted(params.weights, order), {}};
  for (auto c : order) out.item_probs.push_back(params.item_probs[static_cast<std::size_t>(c)]);
  return out;
}

}  // namespace latentlab::mixture
