#include "latentlab/gan.hpp"

#include <cmath>
#include <string>

namespace latentlab::gan {

namespace {

using nn::Tensor;

Mat random_batch(const Mat &data, int batch, RandomSource &rng) {
  Mat out(batch, data.cols());
  for (int i = 0; i < batch; ++i) out.row(i) = data.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(data.rows()))));
  return out;
}

void check_data(const GanModel &model, const Mat &x) {
  if (x.cols() != model.data_dim())
    throw InvalidArgument("gan: data has " + std::to_string(x.cols()) + " columns, model expects " +
                          std::to_string(model.data_dim()));
  if (x.rows() == 0) throw InvalidArgument("gan: empty batch");
  if (!x.allFinite()) throw InvalidArgument("gan: non-finite data");
}

}  // namespace

GanModel GanModel::create(int data_dim, const GanConfig &cfg, RandomSource &rng) {
  if (data_dim < 1 || cfg.prior_dim < 1) throw InvalidArgument("gan: dimensions must be positive");
  std::vector<int> g{cfg.prior_dim};
  g.insert(g.end(), cfg.gen_hidden.begin(), cfg.gen_hidden.end());
  g.push_back(data_dim);
  std::vector<int> d{data_dim};
  d.insert(d.end(), cfg.disc_hidden.begin(), cfg.disc_hidden.end());
  d.push_back(1);
  GanModel m;
  m.gen = nn::Mlp::make(g, cfg.activation, nn::Activation::identity, rng);
  m.disc = nn::Mlp::make(d, cfg.activation, nn::Activation::sigmoid, rng);
  m.prior_dim = cfg.prior_dim;
  return m;
}

void GanModel::validate() const {
  if (gen.in_dim() != prior_dim) throw InvalidArgument("gan: generator input must equal the prior dimension");
  if (disc.in_dim() != gen.out_dim()) throw InvalidArgument("gan: discriminator input must equal the data dimension");
  if (disc.out_dim() != 1) throw InvalidArgument("gan: discriminator must output one value");
  if (disc.layers().back().act != nn::Activation::sigmoid)
    throw InvalidArgument("gan: discriminator must end in a sigmoid");
}

Tensor discriminate(const GanModel &model, const Tensor &x) {
  model.validate();
  return nn::clamp(model.disc.forward(x), kClamp, 1.0 - kClamp);
}

Vec discriminate(const GanModel &model, const Mat &x) {
  check_data(model, x);
  nn::NoGradGuard guard;
  return discriminate(model, Tensor::constant(x)).value().col(0);
}

Tensor disc_loss(const GanModel &model, const Tensor &real, const Tensor &fake) {
  const Tensor on_real = nn::mean(nn::log(discriminate(model, real)));
  const Tensor on_fake = nn::mean(nn::log(nn::add_scalar(nn::neg(discriminate(model, fake)), 1.0)));
  return nn::neg(on_real + on_fake);
}

double disc_loss(const GanModel &model, const Mat &real, const Mat &fake) {
  check_data(model, real);
  check_data(model, fake);
  nn::NoGradGuard guard;
  return disc_loss(model, Tensor::constant(real), Tensor::constant(fake)).item();
}

Tensor gen_loss(const GanModel &model, const Tensor &fake, GenLoss kind) {
  const Tensor d = discriminate(model, fake);
  if (kind == GenLoss::non_saturating) return nn::neg(nn::mean(nn::log(d)));
  return nn::mean(nn::log(nn::add_scalar(nn::neg(d), 1.0)));
}

double gen_loss(const GanModel &model, const Mat &fake, GenLoss kind) {
  check_data(model, fake);
  nn::NoGradGuard guard;
  return gen_loss(model, Tensor::constant(fake), kind).item();
}

Mat prior_sample(const GanModel &model, Eigen::Index n, RandomSource &rng) {
  Mat z(n, model.prior_dim);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  return z;
}

Mat generate(const GanModel &model, const Mat &z) {
  model.validate();
  if (z.cols() != model.prior_dim) throw InvalidArgument("gan: noise dimension mismatch");
  nn::NoGradGuard guard;
  return model.gen.forward(Tensor::constant(z)).value();
}

Mat generate(const GanModel &model, Eigen::Index n, RandomSource &rng) {
  return generate(model, prior_sample(model, n, rng));
}

TrainTrace train(GanModel &model, const Mat &data, const TrainConfig &cfg, RandomSource &rng) {
  model.validate();
  check_data(model, data);
  if (cfg.steps < 0 || cfg.batch < 1 || cfg.k_disc < 1)
    throw InvalidArgument("gan: steps must be >= 0, batch >= 1 and k_disc >= 1");
  const auto gen_params = model.gen.parameters();
  const auto disc_params = model.disc.parameters();
  nn::Adam gen_opt(gen_params, cfg.gen_adam);
  nn::Adam disc_opt(disc_params, cfg.disc_adam);
  auto zero = [&] {
    for (auto p : gen_params) p.zero_grad();
    for (auto p : disc_params) p.zero_grad();
  };
  auto check = [](double v, int step) {
    if (!std::isfinite(v)) throw NumericError("gan: loss became non-finite at step " + std::to_string(step));
  };
  TrainTrace trace;
  for (int step = 0; step < cfg.steps; ++step) {
    double dl = 0.0;
    for (int k = 0; k < cfg.k_disc; ++k) {
      const Tensor real = Tensor::constant(random_batch(data, cfg.batch, rng));
      const Tensor fake = Tensor::constant(generate(model, cfg.batch, rng));
      const Tensor loss = disc_loss(model, real, fake);
      dl = loss.item();
      check(dl, step);
      zero();
      loss.backward();
      disc_opt.step();
    }
    const Tensor fake = model.gen.forward(Tensor::constant(prior_sample(model, cfg.batch, rng)));
    const Tensor loss = gen_loss(model, fake, cfg.loss);
    check(loss.item(), step);
    if (!cfg.freeze_generator) {
      zero();
      loss.backward();
      gen_opt.step();
    }
    trace.disc_loss.push_back(dl);
    trace.gen_loss.push_back(loss.item());
  }
  return trace;
}

}  // namespace latentlab::gan
