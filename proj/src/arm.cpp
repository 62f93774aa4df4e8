#include "latentlab/arm.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace latentlab::arm {

namespace {

using nn::Tensor;

// Degree of input column c: its 1-based position.
int input_degree(int c, int alphabet) { return c / alphabet + 1; }
int hidden_degree(int k, int length) { return 1 + k % std::max(1, length - 1); }

MaskedLinear glorot(int in, int out, Mat mask, RandomSource &rng) {
  const double bound = std::sqrt(6.0 / (in + out));
  Mat w(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = bound * (2.0 * rng.uniform() - 1.0);
  return {Tensor::parameter(w.cwiseProduct(mask)), Tensor::parameter(Mat::Zero(1, out)), std::move(mask)};
}

Tensor apply(const MaskedLinear &l, const Tensor &x) {
  return nn::add(nn::matmul(x, nn::mul(l.weight, Tensor::constant(l.mask))), l.bias);
}

// Row-wise categorical draw from probabilities p (sums to one).
int draw(const Eigen::Ref<const Eigen::RowVectorXd> &p, RandomSource &rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (Eigen::Index v = 0; v < p.size(); ++v) {
    acc += p[v];
    if (u < acc) return static_cast<int>(v);
  }
  for (Eigen::Index v = p.size() - 1; v >= 0; --v)
    if (p[v] > 0.0) return static_cast<int>(v);
  return 0;
}

}  // namespace

ArModel ArModel::create(int length, int alphabet, const ArmConfig &cfg, RandomSource &rng) {
  if (length < 1 || alphabet < 2) throw InvalidArgument("arm: need length >= 1 and alphabet >= 2");
  const int in = length * alphabet;
  ArModel m;
  m.length = length;
  m.alphabet = alphabet;
  m.activation = cfg.activation;
  // Degrees of the previous layer's units; inputs first.
  std::vector<int> prev(static_cast<std::size_t>(in));
  for (int c = 0; c < in; ++c) prev[static_cast<std::size_t>(c)] = input_degree(c, alphabet);
  for (int width : cfg.hidden) {
    if (width < 1) throw InvalidArgument("arm: hidden widths must be positive");
    Mat mask(static_cast<Eigen::Index>(prev.size()), width);
    std::vector<int> deg(static_cast<std::size_t>(width));
    for (int k = 0; k < width; ++k) {
      deg[static_cast<std::size_t>(k)] = hidden_degree(k, length);
      for (std::size_t j = 0; j < prev.size(); ++j)
        mask(static_cast<Eigen::Index>(j), k) = deg[static_cast<std::size_t>(k)] >= prev[j] ? 1.0 : 0.0;
    }
    m.hidden.push_back(glorot(static_cast<int>(prev.size()), width, std::move(mask), rng));
    prev = std::move(deg);
  }
  // Output column c predicts position input_degree(c); it may see degrees strictly below.
  Mat out_mask(static_cast<Eigen::Index>(prev.size()), in);
  for (std::size_t j = 0; j < prev.size(); ++j)
    for (int c = 0; c < in; ++c) out_mask(static_cast<Eigen::Index>(j), c) = input_degree(c, alphabet) > prev[j] ? 1.0 : 0.0;
  m.output = glorot(static_cast<int>(prev.size()), in, std::move(out_mask), rng);
  Mat skip_mask(in, in);
  for (int r = 0; r < in; ++r)
    for (int c = 0; c < in; ++c)
      skip_mask(r, c) = input_degree(c, alphabet) > input_degree(r, alphabet) ? 1.0 : 0.0;
  m.skip = glorot(in, in, std::move(skip_mask), rng);
  return m;
}

ArModel ArModel::uniform(int length, int alphabet) {
  RandomSource rng(0);
  ArModel m = create(length, alphabet, {{}, nn::Activation::tanh}, rng);
  for (auto p : m.parameters()) p.mutable_value().setZero();
  return m;
}

std::vector<Tensor> ArModel::parameters() const {
  std::vector<Tensor> p;
  for (const auto &l : hidden) {
    p.push_back(l.weight);
    p.push_back(l.bias);
  }
  for (const auto *l : {&output, &skip}) {
    p.push_back(l->weight);
    p.push_back(l->bias);
  }
  return p;
}

void ArModel::validate() const {
  if (length < 1 || alphabet < 2) throw InvalidArgument("arm: need length >= 1 and alphabet >= 2");
  const Eigen::Index in = static_cast<Eigen::Index>(length) * alphabet;
  Eigen::Index prev = in;
  auto check = [](const MaskedLinear &l, Eigen::Index rows) {
    if (l.weight.rows() != rows || l.mask.rows() != rows || l.mask.cols() != l.weight.cols() ||
        l.bias.rows() != 1 || l.bias.cols() != l.weight.cols())
      throw InvalidArgument("arm: layer shapes do not chain");
  };
  for (const auto &l : hidden) {
    check(l, prev);
    prev = l.weight.cols();
  }
  check(output, prev);
  check(skip, in);
  if (output.weight.cols() != in || skip.weight.cols() != in) throw InvalidArgument("arm: output must be D * V wide");
}

void check_sequences(const ArModel &model, const IntMat &x) {
  if (x.cols() != model.length)
    throw InvalidArgument("arm: sequences have length " + std::to_string(x.cols()) + ", model expects " +
                          std::to_string(model.length));
  if (x.size() > 0 && (x.minCoeff() < 0 || x.maxCoeff() >= model.alphabet))
    throw InvalidArgument("arm: symbol outside 0.." + std::to_string(model.alphabet - 1));
}

Mat one_hot(const IntMat &x, int alphabet) {
  Mat out = Mat::Zero(x.rows(), x.cols() * alphabet);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index d = 0; d < x.cols(); ++d) out(i, d * alphabet + x(i, d)) = 1.0;
  return out;
}

Tensor logits(const ArModel &model, const IntMat &x) {
  model.validate();
  check_sequences(model, x);
  const Tensor in = Tensor::constant(one_hot(x, model.alphabet));
  Tensor h = in;
  for (const auto &l : model.hidden) h = nn::activate(apply(l, h), model.activation);
  return apply(model.output, h) + apply(model.skip, in);
}

Mat conditional_probs(const ArModel &model, const IntMat &x) {
  nn::NoGradGuard guard;
  const Tensor z = logits(model, x);
  Mat p(z.rows(), z.cols());
  for (int d = 0; d < model.length; ++d)
    p.middleCols(d * model.alphabet, model.alphabet) =
        nn::log_softmax(nn::slice_cols(z, d * model.alphabet, model.alphabet)).value().array().exp();
  return p;
}

Tensor log_likelihood_tensor(const ArModel &model, const IntMat &x) {
  const Tensor z = logits(model, x);
  Tensor total;
  for (int d = 0; d < model.length; ++d) {
    std::vector<int> idx(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) idx[static_cast<std::size_t>(i)] = x(i, d);
    const Tensor term = nn::gather(nn::log_softmax(nn::slice_cols(z, d * model.alphabet, model.alphabet)), idx);
    total = total.defined() ? total + term : term;
  }
  return total;
}

Vec log_likelihood(const ArModel &model, const IntMat &x) {
  nn::NoGradGuard guard;
  Vec ll = log_likelihood_tensor(model, x).value().col(0);
  for (Eigen::Index i = 0; i < ll.size(); ++i)
    if (std::isnan(ll[i])) throw NumericError("arm: log-likelihood is NaN");
    else if (ll[i] < kLogZero) ll[i] = kLogZero;
  return ll;
}

IntMat sample(const ArModel &model, Eigen::Index n, RandomSource &rng) {
  model.validate();
  IntMat x = IntMat::Zero(n, model.length);
  for (int d = 0; d < model.length; ++d) {
    // Positions >= d are placeholders; causality makes block d ignore them.
    const Mat p = conditional_probs(model, x).middleCols(d * model.alphabet, model.alphabet);
    for (Eigen::Index i = 0; i < n; ++i) x(i, d) = draw(p.row(i), rng);
  }
  return x;
}

IntMat all_sequences(int length, int alphabet) {
  if (length < 1 || alphabet < 1) throw InvalidArgument("arm: need length >= 1 and alphabet >= 1");
  const double count = std::pow(static_cast<double>(alphabet), length);
  if (count > 1e7) throw InvalidArgument("arm: too many sequences to enumerate");
  const auto n = static_cast<Eigen::Index>(count);
  IntMat out(n, length);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index r = i;
    for (int d = length - 1; d >= 0; --d) {
      out(i, d) = static_cast<int>(r % alphabet);
      r /= alphabet;
    }
  }
  return out;
}

TrainTrace train(ArModel &model, const IntMat &data, const TrainConfig &cfg, RandomSource &rng) {
  model.validate();
  check_sequences(model, data);
  if (cfg.epochs < 0 || cfg.batch < 1) throw InvalidArgument("arm: epochs must be >= 0 and batch >= 1");
  if (data.rows() == 0) throw InvalidArgument("arm: empty data");
  const auto params = model.parameters();
  nn::Adam opt(params, cfg.adam);
  TrainTrace trace;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(data.rows(), rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      IntMat xb(static_cast<Eigen::Index>(stop - start), data.cols());
      for (std::size_t i = start; i < stop; ++i) xb.row(static_cast<Eigen::Index>(i - start)) = data.row(order[i]);
      const Tensor objective = nn::mean(log_likelihood_tensor(model, xb));
      if (!std::isfinite(objective.item()))
        throw NumericError("arm: log-likelihood became non-finite at epoch " + std::to_string(epoch));
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

}  // namespace latentlab::arm
