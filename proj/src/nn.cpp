#include "latentlab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

namespace latentlab::nn {

namespace {

thread_local bool g_grad_enabled = true;

Tensor make(Mat value, std::vector<std::shared_ptr<Node>> parents, std::function<void(Node &)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  const bool track = g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                                   [](const auto &p) { return p->requires_grad; });
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return Tensor(std::move(node));
}

void accumulate(const std::shared_ptr<Node> &p, const Mat &g) {
  if (p->requires_grad) p->grad_buffer() += g;
}

enum class Bcast { same, scalar, row, col };

Bcast broadcast_kind(const Mat &a, const Mat &b, const char *op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::same;
  if (b.rows() == 1 && b.cols() == 1) return Bcast::scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::col;
  throw InvalidArgument(std::string(op) + ": cannot broadcast " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()) + " onto " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()));
}

Mat expand(const Mat &b, Bcast kind, Eigen::Index rows, Eigen::Index cols) {
  switch (kind) {
  case Bcast::same: return b;
  case Bcast::scalar: return Mat::Constant(rows, cols, b(0, 0));
  case Bcast::row: return b.replicate(rows, 1);
  case Bcast::col: return b.replicate(1, cols);
  }
  return b;
}

Mat reduce(const Mat &g, Bcast kind) {
  switch (kind) {
  case Bcast::same: return g;
  case Bcast::scalar: return Mat::Constant(1, 1, g.sum());
  case Bcast::row: return g.colwise().sum();
  case Bcast::col: return g.rowwise().sum();
  }
  return g;
}

template <class F, class D>
Tensor unary(const Tensor &a, F f, D dfdx) {
  Mat out = a.value().unaryExpr(f);
  return make(std::move(out), {a.node()}, [dfdx](Node &self) {
    const Mat &x = self.parents[0]->value;
    accumulate(self.parents[0], self.grad.cwiseProduct(x.binaryExpr(self.value, dfdx)));
  });
}

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Mat &Node::grad_buffer() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) grad = Mat::Zero(value.rows(), value.cols());
  return grad;
}

Tensor Tensor::constant(Mat value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Mat value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Tensor(std::move(node));
}

const Mat &Tensor::value() const {
  if (!node_) throw InvalidArgument("tensor: undefined");
  return node_->value;
}

Mat &Tensor::mutable_value() {
  if (!node_) throw InvalidArgument("tensor: undefined");
  return node_->value;
}

const Mat &Tensor::grad() const {
  if (!node_) throw InvalidArgument("tensor: undefined");
  return node_->grad_buffer();
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) throw InvalidArgument("tensor: item() needs a 1x1 tensor");
  return value()(0, 0);
}

void Tensor::zero_grad() {
  if (node_) node_->grad_buffer().setZero();
}

Tensor Tensor::detach() const { return constant(value()); }

void Tensor::backward() const {
  if (!node_) throw InvalidArgument("backward: undefined tensor");
  if (rows() != 1 || cols() != 1) throw InvalidArgument("backward: loss must be 1x1");
  if (node_->consumed) throw NumericError("backward: graph already consumed; rebuild the loss first");
  node_->consumed = true;
  if (!node_->requires_grad) return;
  // iterative post-order DFS
  std::vector<Node *> order;
  std::unordered_set<Node *> seen;
  std::vector<std::pair<Node *, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto &[n, i] = stack.back();
    if (i < n->parents.size()) {
      Node *p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node *n : order)
    if (n->backward_fn) n->grad_buffer().setZero();
  node_->grad_buffer()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor add(const Tensor &a, const Tensor &b) {
  const Bcast k = broadcast_kind(a.value(), b.value(), "add");
  Mat out = a.value() + expand(b.value(), k, a.rows(), a.cols());
  return make(std::move(out), {a.node(), b.node()}, [k](Node &self) {
    accumulate(self.parents[0], self.grad);
    accumulate(self.parents[1], reduce(self.grad, k));
  });
}

Tensor sub(const Tensor &a, const Tensor &b) {
  const Bcast k = broadcast_kind(a.value(), b.value(), "sub");
  Mat out = a.value() - expand(b.value(), k, a.rows(), a.cols());
  return make(std::move(out), {a.node(), b.node()}, [k](Node &self) {
    accumulate(self.parents[0], self.grad);
    accumulate(self.parents[1], -reduce(self.grad, k));
  });
}

Tensor mul(const Tensor &a, const Tensor &b) {
  const Bcast k = broadcast_kind(a.value(), b.value(), "mul");
  Mat bb = expand(b.value(), k, a.rows(), a.cols());
  Mat out = a.value().cwiseProduct(bb);
  return make(std::move(out), {a.node(), b.node()}, [k, bb](Node &self) {
    accumulate(self.parents[0], self.grad.cwiseProduct(bb));
    if (self.parents[1]->requires_grad)
      accumulate(self.parents[1], reduce(self.grad.cwiseProduct(self.parents[0]->value), k));
  });
}

Tensor div(const Tensor &a, const Tensor &b) {
  const Bcast k = broadcast_kind(a.value(), b.value(), "div");
  Mat bb = expand(b.value(), k, a.rows(), a.cols());
  Mat out = a.value().cwiseQuotient(bb);
  return make(std::move(out), {a.node(), b.node()}, [k, bb](Node &self) {
    accumulate(self.parents[0], self.grad.cwiseQuotient(bb));
    if (self.parents[1]->requires_grad)
      accumulate(self.parents[1], reduce(-self.grad.cwiseProduct(self.value).cwiseQuotient(bb), k));
  });
}

Tensor matmul(const Tensor &a, const Tensor &b) {
  if (a.cols() != b.rows())
    throw InvalidArgument("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                          std::to_string(b.rows()) + " differ");
  Mat out = a.value() * b.value();
  return make(std::move(out), {a.node(), b.node()}, [](Node &self) {
    const auto &pa = self.parents[0];
    const auto &pb = self.parents[1];
    if (pa->requires_grad) accumulate(pa, self.grad * pb->value.transpose());
    if (pb->requires_grad) accumulate(pb, pa->value.transpose() * self.grad);
  });
}

Tensor scale(const Tensor &a, double s) {
  return make(a.value() * s, {a.node()}, [s](Node &self) { accumulate(self.parents[0], self.grad * s); });
}

Tensor add_scalar(const Tensor &a, double s) {
  return make(a.value().array() + s, {a.node()}, [](Node &self) { accumulate(self.parents[0], self.grad); });
}

Tensor neg(const Tensor &a) { return scale(a, -1.0); }

Tensor tanh(const Tensor &a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor &a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor &a) {
  return unary(a, [](double x) { return latentlab::sigmoid(x); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor &a) {
  return unary(a, softplus_value, [](double x, double) { return latentlab::sigmoid(x); });
}

Tensor exp(const Tensor &a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor &a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor &a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor clamp(const Tensor &a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor &a) {
  return make(Mat::Constant(1, 1, a.value().sum()), {a.node()}, [](Node &self) {
    const auto &p = self.parents[0];
    accumulate(p, Mat::Constant(p->value.rows(), p->value.cols(), self.grad(0, 0)));
  });
}

Tensor mean(const Tensor &a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw InvalidArgument("mean: empty tensor");
  return scale(sum(a), 1.0 / n);
}

Tensor row_sum(const Tensor &a) {
  return make(a.value().rowwise().sum(), {a.node()}, [](Node &self) {
    accumulate(self.parents[0], self.grad.replicate(1, self.parents[0]->value.cols()));
  });
}

Tensor log_softmax(const Tensor &a) {
  const Mat &x = a.value();
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    const double lse = m + std::log((x.row(i).array() - m).exp().sum());
    out.row(i) = x.row(i).array() - lse;
  }
  return make(std::move(out), {a.node()}, [](Node &self) {
    const Mat soft = self.value.array().exp();
    const Mat g = self.grad - soft.cwiseProduct(self.grad.rowwise().sum().replicate(1, soft.cols()));
    accumulate(self.parents[0], g);
  });
}

Tensor gather(const Tensor &a, const std::vector<int> &index) {
  if (static_cast<Eigen::Index>(index.size()) != a.rows()) throw InvalidArgument("gather: one index per row");
  Mat out(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const int j = index[static_cast<std::size_t>(i)];
    if (j < 0 || j >= a.cols()) throw InvalidArgument("gather: index out of range");
    out(i, 0) = a.value()(i, j);
  }
  return make(std::move(out), {a.node()}, [index](Node &self) {
    const auto &p = self.parents[0];
    Mat g = Mat::Zero(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, index[static_cast<std::size_t>(i)]) = self.grad(i, 0);
    accumulate(p, g);
  });
}

Tensor concat_cols(const Tensor &a, const Tensor &b) {
  if (a.rows() != b.rows()) throw InvalidArgument("concat_cols: row counts differ");
  Mat out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index ca = a.cols();
  return make(std::move(out), {a.node(), b.node()}, [ca](Node &self) {
    accumulate(self.parents[0], self.grad.leftCols(ca));
    accumulate(self.parents[1], self.grad.rightCols(self.grad.cols() - ca));
  });
}

Tensor slice_cols(const Tensor &a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw InvalidArgument("slice_cols: out of range");
  return make(a.value().middleCols(start, count), {a.node()}, [start, count](Node &self) {
    const auto &p = self.parents[0];
    Mat g = Mat::Zero(p->value.rows(), p->value.cols());
    g.middleCols(start, count) = self.grad;
    accumulate(p, g);
  });
}

Tensor gaussian_logpdf(const Tensor &x, const Tensor &mean, const Tensor &logvar) {
  const Tensor diff = x - mean;
  const Tensor term = add_scalar(square(diff) * exp(-logvar) + logvar, kLog2Pi);
  return scale(row_sum(term), -0.5);
}

Tensor activate(const Tensor &x, Activation act) {
  switch (act) {
  case Activation::identity: return x;
  case Activation::tanh: return tanh(x);
  case Activation::relu: return relu(x);
  case Activation::sigmoid: return sigmoid(x);
  case Activation::softplus: return softplus(x);
  }
  return x;
}

const char *activation_name(Activation act) {
  switch (act) {
  case Activation::identity: return "identity";
  case Activation::tanh: return "tanh";
  case Activation::relu: return "relu";
  case Activation::sigmoid: return "sigmoid";
  case Activation::softplus: return "softplus";
  }
  return "identity";
}

Activation activation_from_name(const std::string &name) {
  for (Activation a : {Activation::identity, Activation::tanh, Activation::relu, Activation::sigmoid,
                       Activation::softplus})
    if (name == activation_name(a)) return a;
  throw InvalidArgument("unknown activation '" + name + "'");
}

Mlp::Mlp(const std::vector<int> &dims, const std::vector<Activation> &acts, RandomSource &rng) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1) throw InvalidArgument("mlp: need one activation per layer");
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l], out = dims[l + 1];
    if (in < 1 || out < 1) throw InvalidArgument("mlp: layer sizes must be positive");
    const double bound = std::sqrt(6.0 / (in + out));
    Mat w(in, out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = bound * (2.0 * rng.uniform() - 1.0);
    layers_.push_back({Tensor::parameter(std::move(w)), Tensor::parameter(Mat::Zero(1, out)), acts[l]});
  }
}

Mlp Mlp::make(const std::vector<int> &dims, Activation hidden, Activation output, RandomSource &rng) {
  if (dims.size() < 2) throw InvalidArgument("mlp: need at least input and output sizes");
  std::vector<Activation> acts(dims.size() - 1, hidden);
  acts.back() = output;
  return Mlp(dims, acts, rng);
}

Mlp::Mlp(std::vector<Dense> layers) : layers_(std::move(layers)) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto &d = layers_[l];
    if (d.bias.rows() != 1 || d.bias.cols() != d.weight.cols()) throw InvalidArgument("mlp: bias shape mismatch");
    if (l > 0 && layers_[l - 1].weight.cols() != d.weight.rows()) throw InvalidArgument("mlp: layer sizes do not chain");
  }
}

Tensor Mlp::forward(const Tensor &x) const {
  if (layers_.empty()) throw InvalidArgument("mlp: no layers");
  if (x.cols() != in_dim())
    throw InvalidArgument("mlp: input has " + std::to_string(x.cols()) + " columns, expected " +
                          std::to_string(in_dim()));
  Tensor h = x;
  for (const auto &d : layers_) h = activate(matmul(h, d.weight) + d.bias, d.act);
  return h;
}

std::vector<Tensor> Mlp::parameters() const {
  std::vector<Tensor> out;
  for (const auto &d : layers_) {
    out.push_back(d.weight);
    out.push_back(d.bias);
  }
  return out;
}

int Mlp::in_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.rows()); }
int Mlp::out_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.cols()); }

Mlp Mlp::clone() const {
  std::vector<Dense> copy;
  for (const auto &d : layers_)
    copy.push_back({Tensor::parameter(d.weight.value()), Tensor::parameter(d.bias.value()), d.act});
  return Mlp(std::move(copy));
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.lr >= 0.0) || !(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0) || !(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0) ||
      !(cfg_.eps > 0.0))
    throw InvalidArgument("adam: invalid hyperparameters");
  for (const auto &p : params_) {
    m_.push_back(Mat::Zero(p.rows(), p.cols()));
    v_.push_back(Mat::Zero(p.rows(), p.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Mat &g = params_[i].grad();
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const Mat mhat = m_[i] / c1;
    const Mat vhat = v_[i] / c2;
    params_[i].mutable_value().array() -= cfg_.lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
  }
}

void Adam::zero_grad() {
  for (auto &p : params_) p.zero_grad();
}

double gradient_check(const std::function<Tensor()> &loss, const std::vector<Tensor> &params, double eps) {
  for (auto p : params) p.zero_grad();
  loss().backward();
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (auto p : params) {
    const Mat analytic = p.grad();
    Mat &v = p.mutable_value();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double orig = v.data()[i];
      double plus, minus;
      {
        NoGradGuard guard;
        v.data()[i] = orig + eps;
        plus = loss().item();
        v.data()[i] = orig - eps;
        minus = loss().item();
      }
      v.data()[i] = orig;
      const double fd = (plus - minus) / (2.0 * eps);
      const double a = analytic.data()[i];
      diff2 += (a - fd) * (a - fd);
      a2 += a * a;
      n2 += fd * fd;
    }
  }
  return std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
}

}  // namespace latentlab::nn
