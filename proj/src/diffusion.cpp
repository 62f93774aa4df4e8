#include "latentlab/diffusion.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace latentlab::diffusion {

namespace {

using nn::Tensor;

Mat normal_mat(Eigen::Index r, Eigen::Index c, RandomSource &rng) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

std::vector<int> uniform_steps(Eigen::Index n, int steps, RandomSource &rng) {
  std::vector<int> t(static_cast<std::size_t>(n));
  for (auto &v : t) v = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(steps)));
  return t;
}

// Per-row scaling by a function of that row's step.
template <class F>
Mat scale_rows(const Mat &x, const std::vector<int> &t, F f) {
  Mat out = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) *= f(t[static_cast<std::size_t>(i)]);
  return out;
}

void check_data(const Mat &x, int dim) {
  if (x.cols() != dim)
    throw InvalidArgument("diffusion: data has " + std::to_string(x.cols()) + " columns, model expects " +
                          std::to_string(dim));
  if (!x.allFinite()) throw InvalidArgument("diffusion: non-finite data");
}

}  // namespace

NoiseSchedule::NoiseSchedule(Vec betas) : betas_(std::move(betas)) {
  if (betas_.size() == 0) throw InvalidArgument("diffusion: schedule needs at least one step");
  alpha_bars_.resize(betas_.size());
  complements_.resize(betas_.size());
  double prod = 1.0, comp = 0.0;
  for (Eigen::Index i = 0; i < betas_.size(); ++i) {
    if (!(betas_[i] > 0.0 && betas_[i] < 1.0)) throw InvalidArgument("diffusion: betas must lie in (0, 1)");
    comp += betas_[i] * prod;  // 1 - a(1 - b) = (1 - a) + a b
    prod *= 1.0 - betas_[i];
    alpha_bars_[i] = prod;
    complements_[i] = comp;
  }
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_1, double beta_T) {
  if (steps < 1) throw InvalidArgument("diffusion: schedule needs at least one step");
  if (steps == 1) return NoiseSchedule(Vec::Constant(1, beta_1));
  return NoiseSchedule(Vec::LinSpaced(steps, beta_1, beta_T));
}

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > steps())
    throw InvalidArgument("diffusion: step " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
}

double NoiseSchedule::beta(int t) const {
  check_step(t);
  return betas_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  check_step(t);
  return alpha_bars_[t - 1];
}

double NoiseSchedule::one_minus_alpha_bar(int t) const {
  if (t == 0) return 0.0;
  check_step(t);
  return complements_[t - 1];
}

double NoiseSchedule::beta_tilde(int t) const {
  return one_minus_alpha_bar(t - 1) / one_minus_alpha_bar(t) * beta(t);
}

Mat time_embedding(const std::vector<int> &t, int steps) {
  Mat e(static_cast<Eigen::Index>(t.size()), kTimeFeatures);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double tau = static_cast<double>(t[i]) / steps;
    const double a = std::numbers::pi * tau;
    e.row(static_cast<Eigen::Index>(i)) << tau, std::sin(a), std::cos(a), std::sin(2.0 * a), std::cos(2.0 * a);
  }
  return e;
}

DiffusionModel DiffusionModel::create(int dim, const DiffusionConfig &cfg, RandomSource &rng) {
  if (dim < 1) throw InvalidArgument("diffusion: dimension must be positive");
  DiffusionModel m;
  m.schedule = NoiseSchedule::linear(cfg.steps, cfg.beta_1, cfg.beta_T);
  std::vector<int> dims{dim + kTimeFeatures};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(dim);
  m.eps_net = nn::Mlp::make(dims, cfg.activation, nn::Activation::identity, rng);
  m.dim = dim;
  return m;
}

void DiffusionModel::validate() const {
  if (dim < 1) throw InvalidArgument("diffusion: dimension must be positive");
  if (eps_net.in_dim() != dim + kTimeFeatures || eps_net.out_dim() != dim)
    throw InvalidArgument("diffusion: eps_net must map d + time features to d");
}

Tensor predict_eps(const DiffusionModel &model, const Tensor &x_t, const std::vector<int> &t) {
  model.validate();
  if (static_cast<Eigen::Index>(t.size()) != x_t.rows()) throw InvalidArgument("diffusion: one step per row required");
  const Tensor emb = Tensor::constant(time_embedding(t, model.schedule.steps()));
  return model.eps_net.forward(nn::concat_cols(x_t, emb));
}

EpsPredictor predictor(const DiffusionModel &model) {
  return [model](const Mat &x_t, const std::vector<int> &t) {
    nn::NoGradGuard guard;
    return predict_eps(model, Tensor::constant(x_t), t).value();
  };
}

Noised q_sample(const NoiseSchedule &s, const Mat &x0, const std::vector<int> &t, RandomSource &rng) {
  if (static_cast<Eigen::Index>(t.size()) != x0.rows()) throw InvalidArgument("diffusion: one step per row required");
  for (int v : t) (void)s.beta(v);
  Noised out;
  out.eps = normal_mat(x0.rows(), x0.cols(), rng);
  out.x_t = scale_rows(x0, t, [&](int v) { return std::sqrt(s.alpha_bar(v)); }) +
            scale_rows(out.eps, t, [&](int v) { return std::sqrt(s.one_minus_alpha_bar(v)); });
  return out;
}

Noised q_sample(const NoiseSchedule &s, const Mat &x0, int t, RandomSource &rng) {
  return q_sample(s, x0, std::vector<int>(static_cast<std::size_t>(x0.rows()), t), rng);
}

Mat q_step(const NoiseSchedule &s, const Mat &x_prev, int t, RandomSource &rng) {
  const double b = s.beta(t);
  return std::sqrt(1.0 - b) * x_prev + std::sqrt(b) * normal_mat(x_prev.rows(), x_prev.cols(), rng);
}

Posterior posterior_params(const NoiseSchedule &s, const Mat &x_t, const Mat &x0, int t) {
  if (x_t.rows() != x0.rows() || x_t.cols() != x0.cols()) throw InvalidArgument("diffusion: shape mismatch");
  const double b = s.beta(t), ab_prev = s.alpha_bar(t - 1);
  const double m = s.one_minus_alpha_bar(t), m_prev = s.one_minus_alpha_bar(t - 1);
  const double c0 = std::sqrt(ab_prev) * b / m;
  const double ct = std::sqrt(1.0 - b) * m_prev / m;
  return {c0 * x0 + ct * x_t, s.beta_tilde(t)};
}

Mat reverse_mean(const NoiseSchedule &s, const Mat &x_t, const Mat &eps, int t) {
  const Mat x0_hat = (x_t - std::sqrt(s.one_minus_alpha_bar(t)) * eps) / std::sqrt(s.alpha_bar(t));
  return posterior_params(s, x_t, x0_hat, t).mean;
}

double loss_simple(const NoiseSchedule &s, const EpsPredictor &eps_hat, const Mat &x0, RandomSource &rng) {
  if (x0.rows() == 0) throw InvalidArgument("diffusion: empty batch");
  const auto t = uniform_steps(x0.rows(), s.steps(), rng);
  const Noised q = q_sample(s, x0, t, rng);
  return (q.eps - eps_hat(q.x_t, t)).rowwise().squaredNorm().mean();
}

double loss_simple(const DiffusionModel &model, const Mat &x0, RandomSource &rng) {
  check_data(x0, model.dim);
  return loss_simple(model.schedule, predictor(model), x0, rng);
}

Tensor loss_simple_tensor(const DiffusionModel &model, const Mat &x0, const std::vector<int> &t, const Mat &eps) {
  check_data(x0, model.dim);
  if (x0.rows() == 0) throw InvalidArgument("diffusion: empty batch");
  if (eps.rows() != x0.rows() || eps.cols() != x0.cols()) throw InvalidArgument("diffusion: noise shape mismatch");
  if (static_cast<Eigen::Index>(t.size()) != x0.rows()) throw InvalidArgument("diffusion: one step per row required");
  const auto &s = model.schedule;
  const Mat x_t = scale_rows(x0, t, [&](int v) { return std::sqrt(s.alpha_bar(v)); }) +
                  scale_rows(eps, t, [&](int v) { return std::sqrt(s.one_minus_alpha_bar(v)); });
  const Tensor err = Tensor::constant(eps) - predict_eps(model, Tensor::constant(x_t), t);
  return nn::mean(nn::row_sum(nn::square(err)));
}

double elbo_term(const NoiseSchedule &s, const EpsPredictor &eps_hat, const Mat &x0, const Mat &x_t, int t) {
  const Mat mu_theta =
      reverse_mean(s, x_t, eps_hat(x_t, std::vector<int>(static_cast<std::size_t>(x_t.rows()), t)), t);
  if (t == 1) return (x0 - mu_theta).rowwise().squaredNorm().mean() / (2.0 * s.beta(1));
  const Posterior q = posterior_params(s, x_t, x0, t);
  return (q.mean - mu_theta).rowwise().squaredNorm().mean() / (2.0 * q.variance);
}

std::vector<double> elbo_terms(const NoiseSchedule &s, const EpsPredictor &eps_hat, const Mat &x0,
                               RandomSource &rng) {
  if (x0.rows() == 0) throw InvalidArgument("diffusion: empty batch");
  std::vector<double> terms;
  for (int t = 1; t <= s.steps(); ++t) terms.push_back(elbo_term(s, eps_hat, x0, q_sample(s, x0, t, rng).x_t, t));
  return terms;
}

std::vector<double> elbo_terms(const DiffusionModel &model, const Mat &x0, RandomSource &rng) {
  check_data(x0, model.dim);
  return elbo_terms(model.schedule, predictor(model), x0, rng);
}

Vec point_elbo(const DiffusionModel &model, const Mat &x0, RandomSource &rng) {
  model.validate();
  check_data(x0, model.dim);
  const auto &s = model.schedule;
  const auto eps_hat = predictor(model);
  const int steps = s.steps();
  const double ab = s.alpha_bar(steps), m = s.one_minus_alpha_bar(steps);
  Vec bound = -0.5 * (ab * x0.rowwise().squaredNorm().array() + model.dim * (m - 1.0 - std::log(m))).matrix();
  for (int t = 1; t <= steps; ++t) {
    const Mat x_t = q_sample(s, x0, t, rng).x_t;
    const Mat mu = reverse_mean(s, x_t, eps_hat(x_t, std::vector<int>(static_cast<std::size_t>(x0.rows()), t)), t);
    if (t == 1) {
      bound -= ((x0 - mu).rowwise().squaredNorm() / (2.0 * s.beta(1))).eval();
      bound.array() -= 0.5 * model.dim * (kLog2Pi + std::log(s.beta(1)));
    } else {
      bound -= ((posterior_params(s, x_t, x0, t).mean - mu).rowwise().squaredNorm() / (2.0 * s.beta_tilde(t))).eval();
    }
  }
  return bound;
}

Mat sample(const NoiseSchedule &s, const EpsPredictor &eps_hat, int dim, Eigen::Index n, RandomSource &rng) {
  if (dim < 1 || n < 0) throw InvalidArgument("diffusion: invalid sample shape");
  Mat x = normal_mat(n, dim, rng);
  for (int t = s.steps(); t >= 1; --t) {
    x = reverse_mean(s, x, eps_hat(x, std::vector<int>(static_cast<std::size_t>(n), t)), t);
    if (t > 1) x += std::sqrt(s.beta_tilde(t)) * normal_mat(n, dim, rng);
  }
  return x;
}

Mat sample(const DiffusionModel &model, Eigen::Index n, RandomSource &rng) {
  model.validate();
  return sample(model.schedule, predictor(model), model.dim, n, rng);
}

TrainTrace train(DiffusionModel &model, const Mat &data, const TrainConfig &cfg, RandomSource &rng) {
  model.validate();
  check_data(data, model.dim);
  if (cfg.epochs < 0 || cfg.batch < 1) throw InvalidArgument("diffusion: epochs must be >= 0 and batch >= 1");
  if (data.rows() == 0) throw InvalidArgument("diffusion: empty data");
  const auto params = model.eps_net.parameters();
  nn::Adam opt(params, cfg.adam);
  TrainTrace trace;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(data.rows(), rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      const Mat xb = gather_rows(data, {order.begin() + static_cast<std::ptrdiff_t>(start),
                                        order.begin() + static_cast<std::ptrdiff_t>(stop)});
      const auto t = uniform_steps(xb.rows(), model.schedule.steps(), rng);
      const Tensor loss = loss_simple_tensor(model, xb, t, normal_mat(xb.rows(), xb.cols(), rng));
      if (!std::isfinite(loss.item()))
        throw NumericError("diffusion: loss became non-finite at epoch " + std::to_string(epoch));
      for (auto p : params) p.zero_grad();
      loss.backward();
      opt.step();
      total += loss.item();
      ++batches;
    }
    trace.epoch_loss.push_back(total / batches);
  }
  return trace;
}

}  // namespace latentlab::diffusion
