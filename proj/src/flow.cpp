#include "latentlab/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace latentlab::flow {

namespace {

using nn::Tensor;

constexpr double kScaleBound = 5.0;
constexpr double kRootTol = 1e-12;
constexpr int kRootIters = 100;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

template <class... F>
struct Overloaded : F... {
  using F::operator()...;
};
template <class... F>
Overloaded(F...) -> Overloaded<F...>;

// d x |idx| selector: x * S picks the columns idx in order.
Mat selector(int dim, const std::vector<int> &idx) {
  Mat s = Mat::Zero(dim, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) s(idx[j], static_cast<Eigen::Index>(j)) = 1.0;
  return s;
}

void check_index_set(const std::vector<int> &idx, int dim, const char *what) {
  std::vector<char> seen(static_cast<std::size_t>(dim), 0);
  for (int i : idx) {
    if (i < 0 || i >= dim || seen[static_cast<std::size_t>(i)])
      throw InvalidArgument(std::string("flow: ") + what + " is not a partition of 0..d-1");
    seen[static_cast<std::size_t>(i)] = 1;
  }
}

void check_rows(const Mat &x, int dim) {
  if (x.cols() != dim)
    throw InvalidArgument("flow: input has " + std::to_string(x.cols()) + " columns, model expects " +
                          std::to_string(dim));
}

struct CouplingParts {
  Tensor a;      // conditioning block, n x |a|
  Tensor b;      // transformed block, n x |b|
  Tensor s;      // bounded log-scale, n x |b|
  Tensor shift;  // n x |b|
};

CouplingParts coupling_parts(const CouplingLayer &layer, const Tensor &in) {
  const int d = layer.dim();
  CouplingParts p;
  p.a = nn::matmul(in, Tensor::constant(selector(d, layer.cond)));
  p.b = nn::matmul(in, Tensor::constant(selector(d, layer.trans)));
  p.s = nn::scale(nn::tanh(nn::scale(layer.s_net.forward(p.a), 1.0 / kScaleBound)), kScaleBound);
  p.shift = layer.t_net.forward(p.a);
  return p;
}

Tensor coupling_assemble(const CouplingLayer &layer, const Tensor &a, const Tensor &b) {
  const int d = layer.dim();
  return nn::matmul(a, Tensor::constant(selector(d, layer.cond).transpose())) +
         nn::matmul(b, Tensor::constant(selector(d, layer.trans).transpose()));
}

struct TensorStep {
  Tensor value;
  Tensor logdet;  // n x 1
};

TensorStep coupling_forward(const CouplingLayer &layer, const Tensor &z) {
  const CouplingParts p = coupling_parts(layer, z);
  const Tensor xb = p.b * nn::exp(p.s) + p.shift;
  return {coupling_assemble(layer, p.a, xb), nn::row_sum(p.s)};
}

TensorStep coupling_inverse(const CouplingLayer &layer, const Tensor &x) {
  const CouplingParts p = coupling_parts(layer, x);
  const Tensor zb = (p.b - p.shift) * nn::exp(nn::neg(p.s));
  return {coupling_assemble(layer, p.a, zb), nn::neg(nn::row_sum(p.s))};
}

Mat permute_cols(const Mat &z, const std::vector<int> &perm) {
  Mat x(z.rows(), z.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = z.col(perm[i]);
  return x;
}

std::vector<int> invert_perm(const std::vector<int> &perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  return inv;
}

// Solves alpha + c * tanh(alpha + b) = target; the left side is strictly
// increasing when c > -1 and the root lies within |c| of target. Converges
// on the step size so near-flat layers still invert to full precision.
double planar_root(double target, double c, double b) {
  double lo = target - std::abs(c), hi = target + std::abs(c);
  double alpha = target;
  for (int it = 0; it < kRootIters; ++it) {
    const double th = std::tanh(alpha + b);
    const double g = alpha + c * th - target;
    if (g == 0.0) return alpha;
    if (g > 0) hi = alpha;
    else lo = alpha;
    double next = alpha - g / (1.0 + c * (1.0 - th * th));
    if (!(next >= lo && next <= hi)) next = 0.5 * (lo + hi);
    const double scale = std::max(1.0, std::abs(alpha));
    if (std::abs(next - alpha) <= kRootTol * scale || hi - lo <= kRootTol * scale) return next;
    alpha = next;
  }
  throw NumericError("flow: planar inverse did not converge");
}

Transformed planar_forward(const PlanarLayer &layer, const Mat &z) {
  const Vec uh = layer.u_hat();
  const double wu = layer.w.dot(uh);
  const Vec h = ((z * layer.w).array() + layer.b).tanh();
  Transformed out;
  out.value = z + h * uh.transpose();
  out.logdet = (1.0 + (1.0 - h.array().square()) * wu).abs().log();
  return out;
}

Transformed planar_inverse(const PlanarLayer &layer, const Mat &x) {
  const Vec uh = layer.u_hat();
  const double wu = layer.w.dot(uh);
  const Vec target = x * layer.w;
  Vec h(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) h[i] = std::tanh(planar_root(target[i], wu, layer.b) + layer.b);
  Transformed out;
  out.value = x - h * uh.transpose();
  out.logdet = -(1.0 + (1.0 - h.array().square()) * wu).abs().log();
  return out;
}

Tensor base_logpdf(const Tensor &z) {
  return nn::gaussian_logpdf(z, Tensor::constant(Mat::Zero(1, 1)), Tensor::constant(Mat::Zero(1, 1)));
}

}  // namespace

PlanarLayer PlanarLayer::random(int dim, RandomSource &rng, double scale) {
  if (dim < 1) throw InvalidArgument("flow: dimension must be positive");
  PlanarLayer p;
  p.u = scale * rng.normal_vec(dim);
  p.w = scale * rng.normal_vec(dim);
  p.b = scale * rng.normal();
  return p;
}

Vec PlanarLayer::u_hat() const {
  const double ww = w.squaredNorm();
  if (ww == 0.0) return u;
  const double wu = w.dot(u);
  return u + ((-1.0 + softplus(wu)) - wu) / ww * w;
}

void PlanarLayer::validate() const {
  if (u.size() != w.size() || w.size() < 1) throw InvalidArgument("flow: planar u and w must share a positive size");
  if (!u.allFinite() || !w.allFinite() || !std::isfinite(b)) throw InvalidArgument("flow: non-finite planar parameters");
}

CouplingLayer CouplingLayer::create(int dim, std::vector<int> cond, const std::vector<int> &hidden, nn::Activation act,
                                    RandomSource &rng, bool zero_output) {
  check_index_set(cond, dim, "conditioning set");
  CouplingLayer layer;
  std::vector<char> in_cond(static_cast<std::size_t>(dim), 0);
  for (int i : cond) in_cond[static_cast<std::size_t>(i)] = 1;
  for (int i = 0; i < dim; ++i)
    if (!in_cond[static_cast<std::size_t>(i)]) layer.trans.push_back(i);
  layer.cond = std::move(cond);
  if (layer.cond.empty() || layer.trans.empty()) throw InvalidArgument("flow: coupling needs both halves non-empty");
  std::vector<int> dims{static_cast<int>(layer.cond.size())};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(static_cast<int>(layer.trans.size()));
  layer.s_net = nn::Mlp::make(dims, act, nn::Activation::identity, rng);
  layer.t_net = nn::Mlp::make(dims, act, nn::Activation::identity, rng);
  if (zero_output) {
    for (const nn::Mlp *net : {&layer.s_net, &layer.t_net}) {
      nn::Tensor w = net->layers().back().weight;
      nn::Tensor bias = net->layers().back().bias;
      w.mutable_value().setZero();
      bias.mutable_value().setZero();
    }
  }
  return layer;
}

std::vector<nn::Tensor> CouplingLayer::parameters() const {
  auto p = s_net.parameters();
  auto t = t_net.parameters();
  p.insert(p.end(), t.begin(), t.end());
  return p;
}

void CouplingLayer::validate() const {
  std::vector<int> all = cond;
  all.insert(all.end(), trans.begin(), trans.end());
  check_index_set(all, dim(), "coupling mask");
  if (cond.empty() || trans.empty()) throw InvalidArgument("flow: coupling needs both halves non-empty");
  for (const nn::Mlp *net : {&s_net, &t_net})
    if (net->in_dim() != static_cast<int>(cond.size()) || net->out_dim() != static_cast<int>(trans.size()))
      throw InvalidArgument("flow: coupling net shape does not match its mask");
}

void PermutationLayer::validate() const {
  if (perm.empty()) throw InvalidArgument("flow: empty permutation");
  check_index_set(perm, dim(), "permutation");
}

int layer_dim(const Layer &layer) {
  return std::visit([](const auto &l) { return l.dim(); }, layer);
}

FlowModel FlowModel::coupling_stack(int dim, const CouplingConfig &cfg, RandomSource &rng) {
  if (dim < 2) throw InvalidArgument("flow: coupling layers need at least two dimensions");
  if (cfg.couplings < 1) throw InvalidArgument("flow: need at least one coupling layer");
  const int half = dim / 2;
  FlowModel m;
  m.dim = dim;
  for (int k = 0; k < cfg.couplings; ++k) {
    if (k > 0) {
      // Shuffle within each half so the alternation still covers every coordinate.
      std::vector<int> perm(static_cast<std::size_t>(dim));
      std::iota(perm.begin(), perm.end(), 0);
      for (auto [lo, hi] : {std::pair{0, half}, std::pair{half, dim}})
        for (int i = hi - 1; i > lo; --i)
          std::swap(perm[static_cast<std::size_t>(i)],
                    perm[static_cast<std::size_t>(lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(i - lo + 1))))]);
      m.layers.emplace_back(PermutationLayer{perm});
    }
    std::vector<int> cond(static_cast<std::size_t>(k % 2 == 0 ? half : dim - half));
    std::iota(cond.begin(), cond.end(), k % 2 == 0 ? 0 : half);
    m.layers.emplace_back(CouplingLayer::create(dim, cond, cfg.hidden, cfg.activation, rng, cfg.zero_output));
  }
  return m;
}

FlowModel FlowModel::planar_stack(int dim, int count, RandomSource &rng, double scale) {
  if (count < 0) throw InvalidArgument("flow: negative layer count");
  FlowModel m;
  m.dim = dim;
  for (int k = 0; k < count; ++k) m.layers.emplace_back(PlanarLayer::random(dim, rng, scale));
  return m;
}

std::vector<nn::Tensor> FlowModel::parameters() const {
  std::vector<nn::Tensor> out;
  for (const auto &l : layers)
    if (const auto *c = std::get_if<CouplingLayer>(&l)) {
      auto p = c->parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
  return out;
}

bool FlowModel::trainable() const {
  return std::none_of(layers.begin(), layers.end(),
                      [](const Layer &l) { return std::holds_alternative<PlanarLayer>(l); });
}

void FlowModel::validate() const {
  if (dim < 1) throw InvalidArgument("flow: dimension must be positive");
  for (const auto &l : layers) {
    std::visit([](const auto &layer) { layer.validate(); }, l);
    if (layer_dim(l) != dim) throw InvalidArgument("flow: layer dimension differs from model dimension");
  }
}

Transformed layer_forward(const Layer &layer, const Mat &z) {
  check_rows(z, layer_dim(layer));
  return std::visit(Overloaded{
                        [&](const PlanarLayer &p) { return planar_forward(p, z); },
                        [&](const CouplingLayer &c) {
                          nn::NoGradGuard guard;
                          const TensorStep s = coupling_forward(c, Tensor::constant(z));
                          return Transformed{s.value.value(), s.logdet.value().col(0)};
                        },
                        [&](const PermutationLayer &p) {
                          return Transformed{permute_cols(z, p.perm), Vec::Zero(z.rows())};
                        },
                    },
                    layer);
}

Transformed layer_inverse(const Layer &layer, const Mat &x) {
  check_rows(x, layer_dim(layer));
  return std::visit(Overloaded{
                        [&](const PlanarLayer &p) { return planar_inverse(p, x); },
                        [&](const CouplingLayer &c) {
                          nn::NoGradGuard guard;
                          const TensorStep s = coupling_inverse(c, Tensor::constant(x));
                          return Transformed{s.value.value(), s.logdet.value().col(0)};
                        },
                        [&](const PermutationLayer &p) {
                          return Transformed{permute_cols(x, invert_perm(p.perm)), Vec::Zero(x.rows())};
                        },
                    },
                    layer);
}

Transformed forward_with_logdet(const FlowModel &model, const Mat &z0) {
  model.validate();
  check_rows(z0, model.dim);
  Transformed out{z0, Vec::Zero(z0.rows())};
  for (const auto &l : model.layers) {
    Transformed step = layer_forward(l, out.value);
    out.value = std::move(step.value);
    out.logdet += step.logdet;
  }
  return out;
}

Transformed inverse_with_logdet(const FlowModel &model, const Mat &x) {
  model.validate();
  check_rows(x, model.dim);
  Transformed out{x, Vec::Zero(x.rows())};
  for (auto it = model.layers.rbegin(); it != model.layers.rend(); ++it) {
    Transformed step = layer_inverse(*it, out.value);
    out.value = std::move(step.value);
    out.logdet += step.logdet;
  }
  return out;
}

Mat inverse(const FlowModel &model, const Mat &x) { return inverse_with_logdet(model, x).value; }

Vec log_likelihood(const FlowModel &model, const Mat &x) {
  const Transformed inv = inverse_with_logdet(model, x);
  const Vec sq = inv.value.rowwise().squaredNorm();
  return (-0.5 * (sq.array() + model.dim * kLog2Pi)).matrix() + inv.logdet;
}

Tensor log_likelihood_tensor(const FlowModel &model, const Tensor &x) {
  model.validate();
  check_rows(x.value(), model.dim);
  if (!model.trainable()) throw InvalidArgument("flow: differentiable log-likelihood needs coupling layers only");
  Tensor cur = x;
  Tensor logdet;
  for (auto it = model.layers.rbegin(); it != model.layers.rend(); ++it) {
    if (const auto *c = std::get_if<CouplingLayer>(&*it)) {
      const TensorStep s = coupling_inverse(*c, cur);
      cur = s.value;
      logdet = logdet.defined() ? logdet + s.logdet : s.logdet;
    } else {
      const auto &p = std::get<PermutationLayer>(*it);
      // Inverse permutation as a constant matrix: z = x * P with P(i, perm[i]) = 1.
      Mat pm = Mat::Zero(model.dim, model.dim);
      for (std::size_t i = 0; i < p.perm.size(); ++i) pm(static_cast<Eigen::Index>(i), p.perm[i]) = 1.0;
      cur = nn::matmul(cur, Tensor::constant(pm));
    }
  }
  const Tensor base = base_logpdf(cur);
  return logdet.defined() ? base + logdet : base;
}

Mat sample(const FlowModel &model, Eigen::Index n, RandomSource &rng) {
  Mat z(n, model.dim);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  return forward_with_logdet(model, z).value;
}

FitTrace fit(FlowModel &model, const Mat &data, const FitConfig &cfg, RandomSource &rng) {
  model.validate();
  check_rows(data, model.dim);
  if (!model.trainable()) throw InvalidArgument("flow: fit supports coupling and permutation layers only");
  if (cfg.epochs < 0 || cfg.batch < 1) throw InvalidArgument("flow: epochs must be >= 0 and batch >= 1");
  if (data.rows() == 0) throw InvalidArgument("flow: empty data");
  if (!data.allFinite()) throw InvalidArgument("flow: non-finite data");
  const auto params = model.parameters();
  nn::Adam opt(params, cfg.adam);
  FitTrace trace;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(data.rows(), rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      const Mat xb = gather_rows(data, {order.begin() + static_cast<std::ptrdiff_t>(start),
                                        order.begin() + static_cast<std::ptrdiff_t>(stop)});
      const Tensor objective = nn::mean(log_likelihood_tensor(model, Tensor::constant(xb)));
      if (!std::isfinite(objective.item()))
        throw NumericError("flow: log-likelihood became non-finite at epoch " + std::to_string(epoch));
      for (auto p : params) p.zero_grad();
      nn::neg(objective).backward();
      opt.step();
      total += objective.item();
      ++batches;
    }
    trace.epoch_loglik.push_back(total / batches);
  }
  return trace;
}

}  // namespace latentlab::flow
