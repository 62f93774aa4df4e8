#include "latentlab/sequential.hpp"

#include "latentlab/mixture.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>
#include <string>

namespace latentlab::sequential {

namespace {

constexpr double kEmptyCount = 1e-8;
constexpr double kProbFloor = 1e-10;
constexpr double kRidge = 1e-9;

bool is_stochastic_row(const Eigen::Ref<const Vec> &row) {
  return row.allFinite() && row.minCoeff() >= 0.0 && std::abs(row.sum() - 1.0) < 1e-9;
}

void check_sequence(const HmmParams &p, const Sequence &obs) {
  if (obs.rows() == 0) throw InvalidArgument("hmm: empty sequence");
  if (p.kind == EmissionKind::discrete) {
    if (obs.cols() != 1) throw InvalidArgument("hmm: discrete sequences must have one column");
    for (Eigen::Index t = 0; t < obs.rows(); ++t) {
      const double v = obs(t, 0);
      if (v != std::floor(v) || v < 0 || v >= static_cast<double>(p.obs_dim()))
        throw InvalidArgument("hmm: symbol at step " + std::to_string(t) + " is out of range");
    }
  } else {
    if (obs.cols() != p.obs_dim()) throw InvalidArgument("hmm: observation dimension mismatch");
    if (!obs.allFinite()) throw InvalidArgument("hmm: non-finite observation");
  }
}

Mat log_of(const Mat &m) { return m.array().log().matrix(); }

Mat permute_square(const Mat &m, const std::vector<Eigen::Index> &order) {
  const auto k = static_cast<Eigen::Index>(order.size());
  Mat out(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) out(i, j) = m(order[i], order[j]);
  return out;
}

Mat pool(const std::vector<Sequence> &seqs) {
  Eigen::Index rows = 0;
  for (const auto &s : seqs) rows += s.rows();
  Mat out(rows, seqs.front().cols());
  Eigen::Index at = 0;
  for (const auto &s : seqs) {
    out.middleRows(at, s.rows()) = s;
    at += s.rows();
  }
  return out;
}

struct HmmStats {
  std::vector<HmmMarginals> per_seq;
};

struct HmmEm {
  using Params = HmmParams;
  using Posterior = HmmStats;
  const std::vector<Sequence> &seqs;
  double cov_floor;

  Posterior e_step(const Params &p) const {
    HmmStats s;
    s.per_seq.resize(seqs.size());
    parallel_for(seqs.size(), [&](std::size_t i) { s.per_seq[i] = hmm_forward_backward(p, seqs[i]); });
    return s;
  }

  Params m_step(const Posterior &post, const Params &p, EmEvents &events) const {
    const auto k = p.k();
    Vec pi = Vec::Zero(k);
    Mat trans_counts = Mat::Zero(k, k);
    Vec occupancy = Vec::Zero(k);
    for (const auto &m : post.per_seq) {
      pi += m.gamma.row(0).transpose();
      for (const Mat &xi : m.pairwise) trans_counts += xi;
      occupancy += m.gamma.colwise().sum().transpose();
    }
    Params next = p;
    next.pi = Simplex::normalized(pi);
    for (Eigen::Index i = 0; i < k; ++i) {
      const double row = trans_counts.row(i).sum();
      // a state never left keeps its row: any row is optimal for zero counts
      if (row > 0.0) next.trans.row(i) = trans_counts.row(i) / row;
    }
    std::vector<Eigen::Index> rescued;
    for (Eigen::Index s = 0; s < k; ++s)
      if (occupancy[s] < kEmptyCount) rescued.push_back(s);

    if (p.kind == EmissionKind::discrete) {
      const auto v = p.obs_dim();
      Mat counts = Mat::Zero(k, v);
      for (std::size_t i = 0; i < seqs.size(); ++i)
        for (Eigen::Index t = 0; t < seqs[i].rows(); ++t)
          counts.col(static_cast<Eigen::Index>(seqs[i](t, 0))) += post.per_seq[i].gamma.row(t).transpose();
      Vec pooled = counts.colwise().sum().transpose();
      for (Eigen::Index s = 0; s < k; ++s) {
        Vec row = std::find(rescued.begin(), rescued.end(), s) != rescued.end()
                      ? pooled
                      : Vec(counts.row(s).transpose());
        row /= row.sum();
        row = row.cwiseMax(kProbFloor);
        next.emit_probs[static_cast<std::size_t>(s)] = Simplex::normalized(row);
      }
    } else {
      const auto d = p.obs_dim();
      for (Eigen::Index s = 0; s < k; ++s) {
        if (std::find(rescued.begin(), rescued.end(), s) != rescued.end()) continue;
        Vec mean = Vec::Zero(d);
        for (std::size_t i = 0; i < seqs.size(); ++i)
          mean += seqs[i].transpose() * post.per_seq[i].gamma.col(s);
        mean /= occupancy[s];
        Mat cov = Mat::Zero(d, d);
        for (std::size_t i = 0; i < seqs.size(); ++i) {
          const Mat centered = seqs[i].rowwise() - mean.transpose();
          cov += centered.transpose() * post.per_seq[i].gamma.col(s).asDiagonal() * centered;
        }
        cov /= occupancy[s];
        next.emit_gauss[static_cast<std::size_t>(s)] = Gaussian(mean, clamp_eigenvalues(cov, cov_floor));
      }
      if (!rescued.empty()) {
        // re-seed at the observations least explained by the current model
        std::vector<std::pair<double, std::pair<std::size_t, Eigen::Index>>> fit;
        for (std::size_t i = 0; i < seqs.size(); ++i) {
          const Mat e = emission_log_probs(p, seqs[i]);
          for (Eigen::Index t = 0; t < e.rows(); ++t) fit.push_back({e.row(t).maxCoeff(), {i, t}});
        }
        std::sort(fit.begin(), fit.end());
        const Mat global = clamp_eigenvalues(sample_covariance(pool(seqs)), cov_floor);
        for (std::size_t r = 0; r < rescued.size(); ++r) {
          const auto [i, t] = fit[std::min(r, fit.size() - 1)].second;
          next.emit_gauss[static_cast<std::size_t>(rescued[r])] = Gaussian(seqs[i].row(t).transpose(), global);
        }
      }
    }
    for (Eigen::Index s : rescued) events.record("state " + std::to_string(s) + " re-seeded");
    return next;
  }

  double objective(const Params &p) const { return hmm_loglik(p, seqs); }
};

HmmParams hmm_init(const std::vector<Sequence> &seqs, Eigen::Index k, EmissionKind kind,
                   Eigen::Index symbols, RandomSource &rng) {
  HmmParams p;
  p.kind = kind;
  p.pi = Simplex::uniform(k);
  p.trans = Mat::Constant(k, k, 0.5 / static_cast<double>(k));
  p.trans.diagonal().array() += 0.5;
  const Mat all = pool(seqs);
  if (kind == EmissionKind::discrete) {
    Vec freq = Vec::Zero(symbols);
    for (Eigen::Index t = 0; t < all.rows(); ++t) freq[static_cast<Eigen::Index>(all(t, 0))] += 1.0;
    freq /= freq.sum();
    for (Eigen::Index s = 0; s < k; ++s) {
      Vec row(symbols);
      for (Eigen::Index v = 0; v < symbols; ++v) row[v] = (freq[v] + 1e-3) * (0.9 + 0.2 * rng.uniform());
      p.emit_probs.push_back(Simplex::normalized(row));
    }
  } else {
    if (all.rows() < k) throw InvalidArgument("hmm: fewer observations than states");
    const mixture::GmmParams g = mixture::gmm_init(all, k, rng);
    for (Eigen::Index s = 0; s < k; ++s)
      p.emit_gauss.emplace_back(g.means[static_cast<std::size_t>(s)], g.covs[static_cast<std::size_t>(s)]);
  }
  return p;
}

struct LdsEm {
  using Params = LdsParams;
  using Posterior = std::vector<LdsMarginals>;
  const std::vector<Sequence> &seqs;

  Posterior e_step(const Params &p) const {
    Posterior out(seqs.size());
    parallel_for(seqs.size(), [&](std::size_t i) { out[i] = kalman_smooth(p, seqs[i]); });
    return out;
  }

  Params m_step(const Posterior &post, const Params &p, EmEvents &) const {
    const auto dz = p.dz();
    const auto dx = p.dx();
    Mat sxz = Mat::Zero(dx, dz), sxx = Mat::Zero(dx, dx), szz = Mat::Zero(dz, dz);
    Mat s10 = Mat::Zero(dz, dz), s00 = Mat::Zero(dz, dz), s11 = Mat::Zero(dz, dz);
    Vec m0 = Vec::Zero(dz);
    Mat p0 = Mat::Zero(dz, dz);
    double n_obs = 0.0, n_trans = 0.0;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      const LdsMarginals &m = post[i];
      const Sequence &x = seqs[i];
      const auto t_len = x.rows();
      for (Eigen::Index t = 0; t < t_len; ++t) {
        const Gaussian &g = m.smoothed[static_cast<std::size_t>(t)];
        const Mat second = g.cov + g.mean * g.mean.transpose();
        const Vec xt = x.row(t).transpose();
        sxz += xt * g.mean.transpose();
        sxx += xt * xt.transpose();
        szz += second;
        if (t > 0) {
          const Gaussian &prev = m.smoothed[static_cast<std::size_t>(t - 1)];
          s10 += m.cross[static_cast<std::size_t>(t - 1)] + g.mean * prev.mean.transpose();
          s00 += prev.cov + prev.mean * prev.mean.transpose();
          s11 += second;
        }
      }
      m0 += m.smoothed.front().mean;
      p0 += m.smoothed.front().cov + m.smoothed.front().mean * m.smoothed.front().mean.transpose();
      n_obs += static_cast<double>(t_len);
      n_trans += static_cast<double>(t_len - 1);
    }
    const Mat eye = Mat::Identity(dz, dz);
    Params next = p;
    next.C = (szz + kRidge * eye).ldlt().solve(sxz.transpose()).transpose();
    next.R = symmetrize((sxx - next.C * sxz.transpose()) / n_obs);
    next.R = clamp_eigenvalues(next.R, 1e-12 * std::max(1.0, next.R.trace() / static_cast<double>(dx)));
    if (n_trans > 0) {
      next.A = (s00 + kRidge * eye).ldlt().solve(s10.transpose()).transpose();
      next.Q = symmetrize((s11 - next.A * s10.transpose()) / n_trans);
      next.Q = clamp_eigenvalues(next.Q, 1e-12 * std::max(1.0, next.Q.trace() / static_cast<double>(dz)));
    }
    const double s = static_cast<double>(seqs.size());
    next.mu0 = m0 / s;
    if (seqs.size() >= 2) {
      next.Sigma0 = symmetrize(p0 / s - next.mu0 * next.mu0.transpose());
      next.Sigma0 = clamp_eigenvalues(next.Sigma0, 1e-12 * std::max(1.0, next.Sigma0.trace() / static_cast<double>(dz)));
    }
    return next;
  }

  double objective(const Params &p) const { return lds_loglik(p, seqs); }
};

}  // namespace

Eigen::Index HmmParams::obs_dim() const {
  if (kind == EmissionKind::discrete) return emit_probs.empty() ? 0 : emit_probs.front().size();
  return emit_gauss.empty() ? 0 : emit_gauss.front().dim();
}

void HmmParams::validate() const {
  const auto kk = k();
  if (kk < 1) throw InvalidArgument("HmmParams: no states");
  if (trans.rows() != kk || trans.cols() != kk) throw InvalidArgument("HmmParams: transition shape mismatch");
  for (Eigen::Index i = 0; i < kk; ++i)
    if (!is_stochastic_row(trans.row(i).transpose()))
      throw InvalidArgument("HmmParams: transition row " + std::to_string(i) + " is not a simplex");
  if (kind == EmissionKind::discrete) {
    if (static_cast<Eigen::Index>(emit_probs.size()) != kk) throw InvalidArgument("HmmParams: emission count mismatch");
    for (const auto &e : emit_probs)
      if (e.size() != obs_dim()) throw InvalidArgument("HmmParams: emission alphabet mismatch");
  } else {
    if (static_cast<Eigen::Index>(emit_gauss.size()) != kk) throw InvalidArgument("HmmParams: emission count mismatch");
    for (const auto &e : emit_gauss)
      if (e.dim() != obs_dim()) throw InvalidArgument("HmmParams: emission dimension mismatch");
  }
}

Mat emission_log_probs(const HmmParams &params, const Sequence &obs) {
  params.validate();
  check_sequence(params, obs);
  const auto k = params.k();
  Mat out(obs.rows(), k);
  if (params.kind == EmissionKind::discrete) {
    for (Eigen::Index s = 0; s < k; ++s) {
      const Vec &b = params.emit_probs[static_cast<std::size_t>(s)].probs();
      for (Eigen::Index t = 0; t < obs.rows(); ++t) out(t, s) = std::log(b[static_cast<Eigen::Index>(obs(t, 0))]);
    }
  } else {
    for (Eigen::Index s = 0; s < k; ++s) {
      const GaussianDensity dens(params.emit_gauss[static_cast<std::size_t>(s)]);
      for (Eigen::Index t = 0; t < obs.rows(); ++t) out(t, s) = dens.logpdf(obs.row(t).transpose());
    }
  }
  return out;
}

HmmMarginals hmm_forward_backward(const HmmParams &params, const Sequence &obs) {
  const Mat e = emission_log_probs(params, obs);
  const auto t_len = e.rows();
  const auto k = params.k();
  const Mat log_a = log_of(params.trans);
  const Vec log_pi = params.pi.probs().array().log();
  Mat alpha(t_len, k), beta(t_len, k);
  Vec c(t_len);
  Vec tmp(k);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    for (Eigen::Index j = 0; j < k; ++j) {
      if (t == 0) {
        tmp[j] = log_pi[j] + e(0, j);
      } else {
        Vec in = alpha.row(t - 1).transpose() + log_a.col(j);
        tmp[j] = log_sum_exp(in) + e(t, j);
      }
    }
    c[t] = log_sum_exp(tmp);
    if (!std::isfinite(c[t]))
      throw NumericError("hmm: sequence has zero probability (step " + std::to_string(t) + ")");
    alpha.row(t) = (tmp.array() - c[t]).matrix().transpose();
  }
  beta.row(t_len - 1).setZero();
  for (Eigen::Index t = t_len - 2; t >= 0; --t) {
    const Vec next = e.row(t + 1).transpose() + beta.row(t + 1).transpose();
    for (Eigen::Index i = 0; i < k; ++i) {
      Vec out = log_a.row(i).transpose() + next;
      beta(t, i) = log_sum_exp(out) - c[t + 1];
    }
  }
  HmmMarginals m;
  m.loglik = c.sum();
  m.gamma.resize(t_len, k);
  for (Eigen::Index t = 0; t < t_len; ++t)
    m.gamma.row(t) = Simplex::from_log(alpha.row(t).transpose() + beta.row(t).transpose()).probs().transpose();
  for (Eigen::Index t = 0; t + 1 < t_len; ++t) {
    Mat xi(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = 0; j < k; ++j)
        xi(i, j) = std::exp(alpha(t, i) + log_a(i, j) + e(t + 1, j) + beta(t + 1, j) - c[t + 1]);
    xi /= xi.sum();
    m.pairwise.push_back(std::move(xi));
  }
  return m;
}

double hmm_loglik(const HmmParams &params, const std::vector<Sequence> &seqs) {
  std::vector<double> parts(seqs.size());
  parallel_for(seqs.size(), [&](std::size_t i) { parts[i] = hmm_forward_backward(params, seqs[i]).loglik; });
  return std::accumulate(parts.begin(), parts.end(), 0.0);
}

std::pair<Sequence, IntVec> hmm_sample(const HmmParams &params, Eigen::Index t, RandomSource &rng) {
  params.validate();
  if (t < 1) throw InvalidArgument("hmm_sample: length must be positive");
  Sequence obs(t, params.kind == EmissionKind::discrete ? 1 : params.obs_dim());
  IntVec states(t);
  Eigen::Index z = sample_categorical(params.pi, rng);
  for (Eigen::Index s = 0; s < t; ++s) {
    if (s > 0) z = sample_categorical(Simplex::normalized(params.trans.row(z).transpose()), rng);
    states[s] = static_cast<int>(z);
    if (params.kind == EmissionKind::discrete)
      obs(s, 0) = static_cast<double>(sample_categorical(params.emit_probs[static_cast<std::size_t>(z)], rng));
    else
      obs.row(s) = sample_gaussian(params.emit_gauss[static_cast<std::size_t>(z)], rng).transpose();
  }
  return {std::move(obs), std::move(states)};
}

HmmParams canonicalize(const HmmParams &params) {
  params.validate();
  const auto k = params.k();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](Eigen::Index s) -> std::pair<double, std::vector<double>> {
    const auto ss = static_cast<std::size_t>(s);
    if (params.kind == EmissionKind::discrete) {
      const Vec &p = params.emit_probs[ss].probs();
      return {entropy(params.emit_probs[ss]), std::vector<double>(p.data(), p.data() + p.size())};
    }
    const Vec &m = params.emit_gauss[ss].mean;
    return {m.norm(), std::vector<double>(m.data(), m.data() + m.size())};
  };
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return key(a) < key(b); });
  HmmParams out = params;
  Vec pi(k);
  for (Eigen::Index i = 0; i < k; ++i) pi[i] = params.pi[order[static_cast<std::size_t>(i)]];
  out.pi = Simplex(pi);
  out.trans = permute_square(params.trans, order);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto src = static_cast<std::size_t>(order[i]);
    if (params.kind == EmissionKind::discrete)
      out.emit_probs[i] = params.emit_probs[src];
    else
      out.emit_gauss[i] = params.emit_gauss[src];
  }
  return out;
}

std::pair<HmmParams, FitReport> fit_hmm(const std::vector<Sequence> &seqs, Eigen::Index k,
                                        EmissionKind kind, const EmConfig &cfg,
                                        const HmmFitOptions &options) {
  if (seqs.empty()) throw InvalidArgument("hmm: no sequences");
  if (k < 1) throw InvalidArgument("hmm: need at least one state");
  for (const auto &s : seqs)
    if (s.rows() == 0 || s.cols() != seqs.front().cols()) throw InvalidArgument("hmm: empty or ragged sequence");
  Eigen::Index symbols = options.symbols;
  if (kind == EmissionKind::discrete && symbols == 0)
    for (const auto &s : seqs) symbols = std::max(symbols, static_cast<Eigen::Index>(s.maxCoeff()) + 1);
  RandomSource rng(cfg.seed);
  HmmParams start = options.init ? *options.init : hmm_init(seqs, k, kind, symbols, rng);
  if (start.kind != kind || start.k() != k) throw InvalidArgument("hmm: initial parameters do not match K or kind");
  for (const auto &s : seqs) check_sequence(start, s);
  const double floor = kind == EmissionKind::gaussian ? mixture::covariance_floor(pool(seqs)) : 0.0;
  HmmEm model{seqs, floor};
  auto [params, report] = run_em(model, std::move(start), cfg);
  return {canonicalize(params), std::move(report)};
}

void LdsParams::validate() const {
  const auto z = dz();
  const auto x = dx();
  if (z < 1 || x < 1) throw InvalidArgument("LdsParams: empty dimensions");
  if (A.cols() != z || C.cols() != z || Q.rows() != z || Q.cols() != z || R.rows() != x || R.cols() != x ||
      mu0.size() != z || Sigma0.rows() != z || Sigma0.cols() != z)
    throw InvalidArgument("LdsParams: shape mismatch");
  for (const Mat *m : {&Q, &R, &Sigma0}) {
    const double scale = std::max(1.0, m->cwiseAbs().maxCoeff());
    if (!m->allFinite() || (*m - m->transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
      throw InvalidArgument("LdsParams: covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(*m, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-10 * scale) throw InvalidArgument("LdsParams: covariance is not PSD");
  }
}

FilterResult kalman_filter(const LdsParams &params, const Sequence &obs) {
  params.validate();
  if (obs.rows() == 0 || obs.cols() != params.dx()) throw InvalidArgument("kalman: observation shape mismatch");
  const auto dz = params.dz();
  const Mat eye = Mat::Identity(dz, dz);
  FilterResult out;
  Vec m = params.mu0;
  Mat p = params.Sigma0;
  for (Eigen::Index t = 0; t < obs.rows(); ++t) {
    if (t > 0) {
      m = params.A * m;
      p = symmetrize(params.A * p * params.A.transpose() + params.Q);
    }
    out.predicted.emplace_back(m, p);
    const Vec x = obs.row(t).transpose();
    const Mat s = symmetrize(params.C * p * params.C.transpose() + params.R);
    const Eigen::LLT<Mat> llt(s);
    if (llt.info() != Eigen::Success)
      throw NumericError("kalman: singular innovation covariance at step " + std::to_string(t));
    const Vec innov = x - params.C * m;
    const Mat gain = llt.solve(params.C * p).transpose();
    const Vec white = llt.matrixL().solve(innov);
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    out.loglik += -0.5 * (static_cast<double>(params.dx()) * kLog2Pi + log_det + white.squaredNorm());
    m = m + gain * innov;
    const Mat ikc = eye - gain * params.C;
    p = symmetrize(ikc * p * ikc.transpose() + gain * params.R * gain.transpose());
    out.filtered.emplace_back(m, p);
  }
  return out;
}

LdsMarginals kalman_smooth(const LdsParams &params, const Sequence &obs) {
  FilterResult f = kalman_filter(params, obs);
  const auto t_len = static_cast<std::size_t>(obs.rows());
  LdsMarginals out;
  out.loglik = f.loglik;
  out.smoothed.resize(t_len);
  out.cross.resize(t_len - 1);
  out.smoothed[t_len - 1] = f.filtered[t_len - 1];
  for (std::size_t t = t_len - 1; t-- > 0;) {
    const Gaussian &filt = f.filtered[t];
    const Gaussian &pred = f.predicted[t + 1];
    const Gaussian &next = out.smoothed[t + 1];
    // J = V_t A^T P_{t+1}^{-1}
    const Mat j = pred.cov.ldlt().solve(params.A * filt.cov).transpose();
    const Vec mean = filt.mean + j * (next.mean - pred.mean);
    const Mat cov = symmetrize(filt.cov + j * (next.cov - pred.cov) * j.transpose());
    out.smoothed[t] = Gaussian(mean, cov);
    out.cross[t] = next.cov * j.transpose();
  }
  return out;
}

double lds_loglik(const LdsParams &params, const std::vector<Sequence> &seqs) {
  std::vector<double> parts(seqs.size());
  parallel_for(seqs.size(), [&](std::size_t i) { parts[i] = kalman_filter(params, seqs[i]).loglik; });
  return std::accumulate(parts.begin(), parts.end(), 0.0);
}

std::pair<Sequence, Mat> lds_sample(const LdsParams &params, Eigen::Index t, RandomSource &rng) {
  params.validate();
  if (t < 1) throw InvalidArgument("lds_sample: length must be positive");
  Sequence x(t, params.dx());
  Mat z(t, params.dz());
  const Vec zero_z = Vec::Zero(params.dz());
  const Vec zero_x = Vec::Zero(params.dx());
  Vec state = sample_gaussian(Gaussian(params.mu0, params.Sigma0), rng, Jitter::disabled);
  for (Eigen::Index s = 0; s < t; ++s) {
    if (s > 0) state = params.A * state + sample_gaussian(Gaussian(zero_z, params.Q), rng, Jitter::disabled);
    z.row(s) = state.transpose();
    x.row(s) = (params.C * state + sample_gaussian(Gaussian(zero_x, params.R), rng, Jitter::disabled)).transpose();
  }
  return {std::move(x), std::move(z)};
}

std::pair<LdsParams, FitReport> fit_lds(const std::vector<Sequence> &seqs, Eigen::Index dz,
                                        const EmConfig &cfg, const LdsFitOptions &options) {
  if (seqs.empty()) throw InvalidArgument("lds: no sequences");
  if (dz < 1) throw InvalidArgument("lds: state dimension must be positive");
  const auto dx = seqs.front().cols();
  for (const auto &s : seqs) {
    if (s.rows() < 2) throw InvalidArgument("lds: sequences need at least two steps");
    if (s.cols() != dx || !s.allFinite()) throw InvalidArgument("lds: ragged or non-finite sequence");
  }
  LdsParams start;
  if (options.init) {
    start = *options.init;
  } else {
    const Mat all = pool(seqs);
    const Mat cov = sample_covariance(all);
    start.A = 0.5 * Mat::Identity(dz, dz);
    if (dz == dx) {
      start.C = Mat::Identity(dx, dz);
    } else {
      Eigen::SelfAdjointEigenSolver<Mat> es(cov);
      start.C = Mat::Zero(dx, dz);
      for (Eigen::Index j = 0; j < std::min(dz, dx); ++j) {
        const Eigen::Index src = dx - 1 - j;
        start.C.col(j) = es.eigenvectors().col(src) * std::sqrt(std::max(es.eigenvalues()[src], 1e-6));
      }
    }
    start.Q = Mat::Identity(dz, dz);
    Vec diag = cov.diagonal().cwiseMax(1e-6);
    start.R = diag.asDiagonal();
    start.mu0 = Vec::Zero(dz);
    start.Sigma0 = Mat::Identity(dz, dz);
  }
  start.validate();
  if (start.dz() != dz || start.dx() != dx) throw InvalidArgument("lds: initial parameters do not match dimensions");
  LdsEm model{seqs};
  return run_em(model, std::move(start), cfg);
}

}  // namespace latentlab::sequential
