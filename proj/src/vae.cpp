#include "latentlab/vae.hpp"

#include <cmath>
#include <string>

namespace latentlab::vae {

namespace {

using nn::Tensor;

const double kLogVarLo = 2.0 * std::log(1e-4);
const double kLogVarHi = 2.0 * std::log(1e4);

Mat normal_mat(Eigen::Index r, Eigen::Index c, RandomSource &rng) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

void check_data(const VaeModel &model, const Mat &x) {
  if (x.cols() != model.data_dim())
    throw InvalidArgument("vae: data has " + std::to_string(x.cols()) + " columns, model expects " +
                          std::to_string(model.data_dim()));
  if (!x.allFinite()) throw InvalidArgument("vae: non-finite data");
}

}  // namespace

VaeModel VaeModel::create(int data_dim, const VaeConfig &cfg, RandomSource &rng) {
  if (data_dim < 1 || cfg.latent < 1) throw InvalidArgument("vae: dimensions must be positive");
  if (!(cfg.sigma_dec > 0.0)) throw InvalidArgument("vae: sigma_dec must be positive");
  std::vector<int> enc{data_dim};
  enc.insert(enc.end(), cfg.hidden.begin(), cfg.hidden.end());
  enc.push_back(2 * cfg.latent);
  std::vector<int> dec{cfg.latent};
  dec.insert(dec.end(), cfg.hidden.rbegin(), cfg.hidden.rend());
  dec.push_back(data_dim);
  VaeModel m;
  m.encoder = nn::Mlp::make(enc, cfg.activation, nn::Activation::identity, rng);
  m.decoder = nn::Mlp::make(dec, cfg.activation, nn::Activation::identity, rng);
  m.latent = cfg.latent;
  m.likelihood = cfg.likelihood;
  m.sigma_dec = cfg.sigma_dec;
  return m;
}

std::vector<Tensor> VaeModel::parameters() const {
  auto p = encoder.parameters();
  auto d = decoder.parameters();
  p.insert(p.end(), d.begin(), d.end());
  return p;
}

void VaeModel::validate() const {
  if (encoder.out_dim() != 2 * latent) throw InvalidArgument("vae: encoder output must be 2 * latent");
  if (decoder.in_dim() != latent) throw InvalidArgument("vae: decoder input must equal latent");
  if (decoder.out_dim() != encoder.in_dim()) throw InvalidArgument("vae: decoder output must equal data dimension");
  if (!(sigma_dec > 0.0)) throw InvalidArgument("vae: sigma_dec must be positive");
}

EncodedTensors encode(const VaeModel &model, const Tensor &x) {
  model.validate();
  const Tensor out = model.encoder.forward(x);
  return {nn::slice_cols(out, 0, model.latent),
          nn::clamp(nn::slice_cols(out, model.latent, model.latent), kLogVarLo, kLogVarHi)};
}

Encoding encode(const VaeModel &model, const Mat &x) {
  check_data(model, x);
  nn::NoGradGuard guard;
  const EncodedTensors e = encode(model, Tensor::constant(x));
  return {e.mu.value(), (0.5 * e.logvar.value().array()).exp()};
}

Mat reparameterize(const Mat &mu, const Mat &sigma, RandomSource &rng) {
  if (mu.rows() != sigma.rows() || mu.cols() != sigma.cols()) throw InvalidArgument("reparameterize: shape mismatch");
  return mu + sigma.cwiseProduct(normal_mat(mu.rows(), mu.cols(), rng));
}

Tensor reparameterize(const Tensor &mu, const Tensor &logvar, const Mat &eps) {
  return mu + nn::exp(nn::scale(logvar, 0.5)) * Tensor::constant(eps);
}

double kl_standard_normal(const Vec &mu, const Vec &sigma) {
  if (mu.size() != sigma.size()) throw InvalidArgument("kl: shape mismatch");
  const Vec s2 = sigma.array().square();
  return 0.5 * (s2.array() + mu.array().square() - 1.0 - s2.array().log()).sum();
}

Tensor kl_standard_normal(const Tensor &mu, const Tensor &logvar) {
  const Tensor t = nn::add_scalar(nn::exp(logvar) + nn::square(mu) - logvar, -1.0);
  return nn::scale(nn::row_sum(t), 0.5);
}

Tensor log_likelihood(const VaeModel &model, const Tensor &x, const Tensor &out) {
  if (model.likelihood == Likelihood::gaussian) {
    const double lv = 2.0 * std::log(model.sigma_dec);
    return nn::gaussian_logpdf(x, out, Tensor::constant(Mat::Constant(1, 1, lv)));
  }
  // x * l - softplus(l)
  return nn::row_sum(x * out - nn::softplus(out));
}

Tensor elbo_tensor(const VaeModel &model, const Tensor &x, const Mat &eps) {
  const EncodedTensors e = encode(model, x);
  const Tensor z = reparameterize(e.mu, e.logvar, eps);
  const Tensor recon = log_likelihood(model, x, model.decoder.forward(z));
  return nn::mean(recon - kl_standard_normal(e.mu, e.logvar));
}

ElboParts elbo(const VaeModel &model, const Mat &x, RandomSource &rng, int samples) {
  check_data(model, x);
  if (samples < 1) throw InvalidArgument("vae: need at least one sample");
  nn::NoGradGuard guard;
  const Tensor xt = Tensor::constant(x);
  const EncodedTensors e = encode(model, xt);
  double recon = 0.0;
  for (int s = 0; s < samples; ++s) {
    const Tensor z = reparameterize(e.mu, e.logvar, normal_mat(x.rows(), model.latent, rng));
    recon += log_likelihood(model, xt, model.decoder.forward(z)).value().mean();
  }
  ElboParts parts;
  parts.recon = recon / samples;
  parts.kl = kl_standard_normal(e.mu, e.logvar).value().mean();
  parts.elbo = parts.recon - parts.kl;
  return parts;
}

TrainTrace train(VaeModel &model, const Mat &data, const TrainConfig &cfg, RandomSource &rng) {
  check_data(model, data);
  if (cfg.epochs < 0 || cfg.batch < 1) throw InvalidArgument("vae: epochs must be >= 0 and batch >= 1");
  if (data.rows() == 0) throw InvalidArgument("vae: empty data");
  std::vector<Tensor> params;
  if (!cfg.freeze_encoder) params = model.encoder.parameters();
  if (!cfg.freeze_decoder) {
    auto d = model.decoder.parameters();
    params.insert(params.end(), d.begin(), d.end());
  }
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
      const Tensor objective = elbo_tensor(model, Tensor::constant(xb), normal_mat(xb.rows(), model.latent, rng));
      if (!std::isfinite(objective.item()))
        throw NumericError("vae: ELBO became non-finite at epoch " + std::to_string(epoch));
      for (auto &p : model.parameters()) p.zero_grad();
      nn::neg(objective).backward();
      opt.step();
      total += objective.item();
      ++batches;
    }
    trace.epoch_elbo.push_back(total / batches);
  }
  return trace;
}

Mat reconstruct(const VaeModel &model, const Mat &x) {
  const Encoding e = encode(model, x);
  nn::NoGradGuard guard;
  const Mat out = model.decoder.forward(Tensor::constant(e.mu)).value();
  if (model.likelihood == Likelihood::gaussian) return out;
  return out.unaryExpr([](double v) { return latentlab::sigmoid(v); });
}

Mat sample(const VaeModel &model, Eigen::Index n, RandomSource &rng, bool binary) {
  model.validate();
  nn::NoGradGuard guard;
  const Mat z = normal_mat(n, model.latent, rng);
  const Mat out = model.decoder.forward(Tensor::constant(z)).value();
  if (model.likelihood == Likelihood::gaussian) return out + model.sigma_dec * normal_mat(n, out.cols(), rng);
  Mat p = out.unaryExpr([](double v) { return latentlab::sigmoid(v); });
  if (binary)
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform() < p.data()[i] ? 1.0 : 0.0;
  return p;
}

}  // namespace latentlab::vae
