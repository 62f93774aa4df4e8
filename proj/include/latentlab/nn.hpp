// Minimal reverse-mode automatic differentiation over 2-D dense tensors,
// multilayer perceptrons and the Adam optimizer.
//
// A Tensor is a shared handle to a graph node. Operations on tensors that
// depend on a trainable leaf record a backward closure; calling backward()
// on a 1x1 result walks the graph in reverse topological order and
// accumulates gradients into every trainable leaf.

#pragma once

#include "latentlab/core.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace latentlab::nn {

struct Node;

class Tensor {
public:
  Tensor() = default;
  /// Leaf that never receives gradients.
  [[nodiscard]] static Tensor constant(Mat value);
  /// Trainable leaf.
  [[nodiscard]] static Tensor parameter(Mat value);

  [[nodiscard]] bool defined() const { return node_ != nullptr; }
  [[nodiscard]] const Mat &value() const;
  /// Direct write access; only meaningful for leaves.
  [[nodiscard]] Mat &mutable_value();
  /// Gradient of the last backward pass (zeros if none reached this node).
  [[nodiscard]] const Mat &grad() const;
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 tensor.
  [[nodiscard]] double item() const;
  void zero_grad();

  /// Populates gradients of this 1x1 tensor with respect to every trainable
  /// leaf. The graph is consumed: a second call throws NumericError.
  void backward() const;

  /// Same value, cut from the graph.
  [[nodiscard]] Tensor detach() const;

  [[nodiscard]] const std::shared_ptr<Node> &node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

private:
  std::shared_ptr<Node> node_;
};

struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node &)> backward_fn;

  Mat &grad_buffer();
};

/// While alive, operations record no graph (inference mode).
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
  bool previous_;
};

[[nodiscard]] bool grad_enabled();

// Binary elementwise ops broadcast b over a when b is 1x1, 1xn or mx1.
[[nodiscard]] Tensor add(const Tensor &a, const Tensor &b);
[[nodiscard]] Tensor sub(const Tensor &a, const Tensor &b);
[[nodiscard]] Tensor mul(const Tensor &a, const Tensor &b);
[[nodiscard]] Tensor div(const Tensor &a, const Tensor &b);
[[nodiscard]] Tensor matmul(const Tensor &a, const Tensor &b);
[[nodiscard]] Tensor scale(const Tensor &a, double s);
[[nodiscard]] Tensor add_scalar(const Tensor &a, double s);
[[nodiscard]] Tensor neg(const Tensor &a);

[[nodiscard]] Tensor tanh(const Tensor &a);
[[nodiscard]] Tensor relu(const Tensor &a);
[[nodiscard]] Tensor sigmoid(const Tensor &a);
[[nodiscard]] Tensor softplus(const Tensor &a);
[[nodiscard]] Tensor exp(const Tensor &a);
[[nodiscard]] Tensor log(const Tensor &a);
[[nodiscard]] Tensor square(const Tensor &a);
/// Elementwise clamp; the gradient is zero outside [lo, hi].
[[nodiscard]] Tensor clamp(const Tensor &a, double lo, double hi);

/// Full reductions to 1x1.
[[nodiscard]] Tensor sum(const Tensor &a);
[[nodiscard]] Tensor mean(const Tensor &a);
/// Per-row sums, m x 1.
[[nodiscard]] Tensor row_sum(const Tensor &a);
/// Row-wise log-softmax.
[[nodiscard]] Tensor log_softmax(const Tensor &a);
/// out(i, 0) = a(i, index[i]).
[[nodiscard]] Tensor gather(const Tensor &a, const std::vector<int> &index);
[[nodiscard]] Tensor concat_cols(const Tensor &a, const Tensor &b);
[[nodiscard]] Tensor slice_cols(const Tensor &a, Eigen::Index start, Eigen::Index count);
/// Per-row log N(x; mean, diag(exp(logvar))), m x 1. mean and logvar
/// broadcast like the binary ops.
[[nodiscard]] Tensor gaussian_logpdf(const Tensor &x, const Tensor &mean, const Tensor &logvar);

inline Tensor operator+(const Tensor &a, const Tensor &b) { return add(a, b); }
inline Tensor operator-(const Tensor &a, const Tensor &b) { return sub(a, b); }
inline Tensor operator*(const Tensor &a, const Tensor &b) { return mul(a, b); }
inline Tensor operator/(const Tensor &a, const Tensor &b) { return div(a, b); }
inline Tensor operator-(const Tensor &a) { return neg(a); }
inline Tensor operator*(double s, const Tensor &a) { return scale(a, s); }
inline Tensor operator*(const Tensor &a, double s) { return scale(a, s); }
inline Tensor operator+(const Tensor &a, double s) { return add_scalar(a, s); }

enum class Activation { identity, tanh, relu, sigmoid, softplus };

[[nodiscard]] Tensor activate(const Tensor &x, Activation act);
[[nodiscard]] const char *activation_name(Activation act);
[[nodiscard]] Activation activation_from_name(const std::string &name);

struct Dense {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out
  Activation act = Activation::identity;
};

class Mlp {
public:
  Mlp() = default;
  /// dims = {in, h1, ..., out}; acts has one entry per layer. Weights are
  /// Glorot-uniform, biases zero.
  Mlp(const std::vector<int> &dims, const std::vector<Activation> &acts, RandomSource &rng);
  /// Hidden layers share `hidden`; the last layer uses `output`.
  [[nodiscard]] static Mlp make(const std::vector<int> &dims, Activation hidden, Activation output,
                                RandomSource &rng);
  explicit Mlp(std::vector<Dense> layers);

  /// x is batch x in; returns batch x out.
  [[nodiscard]] Tensor forward(const Tensor &x) const;
  [[nodiscard]] std::vector<Tensor> parameters() const;
  [[nodiscard]] const std::vector<Dense> &layers() const { return layers_; }
  [[nodiscard]] int in_dim() const;
  [[nodiscard]] int out_dim() const;
  /// Deep copy with fresh leaves.
  [[nodiscard]] Mlp clone() const;

private:
  std::vector<Dense> layers_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {});
  /// One bias-corrected update from the current gradients.
  void step();
  void zero_grad();
  [[nodiscard]] long steps() const { return t_; }
  [[nodiscard]] const AdamConfig &config() const { return cfg_; }

private:
  std::vector<Tensor> params_;
  std::vector<Mat> m_, v_;
  AdamConfig cfg_;
  long t_ = 0;
};

/// Relative discrepancy between reverse-mode gradients and central
/// finite differences (step eps), measured as
/// ||g - g_fd|| / max(||g||, ||g_fd||, 1e-8) over all parameters jointly.
/// `loss` must rebuild the graph from the current parameter values.
[[nodiscard]] double gradient_check(const std::function<Tensor()> &loss, const std::vector<Tensor> &params,
                                    double eps = 1e-4);

}  // namespace latentlab::nn
