#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace cardood {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Affine layer y = W x + b over a batch stored one sample per column.
template <typename Scalar>
struct Dense {
  Matrix<Scalar> weight;
  Matrix<Scalar> bias;  // out x 1
  Matrix<Scalar> grad_weight;
  Matrix<Scalar> grad_bias;

  Dense() = default;

  // Uniform(-1/sqrt(in), 1/sqrt(in)); draws in double so float and double
  // models built from one seed hold the same values up to rounding.
  Dense(int in, int out, std::mt19937_64& rng)
      : weight(out, in), bias(out, 1), grad_weight(Matrix<Scalar>::Zero(out, in)),
        grad_bias(Matrix<Scalar>::Zero(out, 1)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index c = 0; c < weight.cols(); ++c)
      for (Eigen::Index r = 0; r < weight.rows(); ++r) weight(r, c) = static_cast<Scalar>(u(rng));
    for (Eigen::Index r = 0; r < bias.rows(); ++r) bias(r, 0) = static_cast<Scalar>(u(rng));
  }

  int in_features() const { return static_cast<int>(weight.cols()); }
  int out_features() const { return static_cast<int>(weight.rows()); }

  Matrix<Scalar> forward(const Matrix<Scalar>& x) const {
    Matrix<Scalar> y = weight * x;
    y.colwise() += bias.col(0);
    return y;
  }

  /// Accumulates parameter gradients, returns dL/dx.
  Matrix<Scalar> backward(const Matrix<Scalar>& x, const Matrix<Scalar>& dy) {
    grad_weight.noalias() += dy * x.transpose();
    grad_bias += dy.rowwise().sum();
    return weight.transpose() * dy;
  }

  void zero_grad() {
    grad_weight.setZero();
    grad_bias.setZero();
  }

  template <typename F>
  void visit(F&& f) {
    f(weight, grad_weight);
    f(bias, grad_bias);
  }
  template <typename F>
  void visit(F&& f) const {
    f(weight, grad_weight);
    f(bias, grad_bias);
  }
};

/// Stack of Dense layers with ReLU between them; the last layer is rectified
/// only when `activate_last` is set.
template <typename Scalar>
class Mlp {
 public:
  struct Cache {
    std::vector<Matrix<Scalar>> inputs;   // input of each layer
    std::vector<Matrix<Scalar>> outputs;  // post-activation output of each layer
  };

  Mlp() = default;
  Mlp(const std::vector<int>& widths, bool activate_last, std::mt19937_64& rng) : activate_last_(activate_last) {
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) layers_.emplace_back(widths[i], widths[i + 1], rng);
  }

  bool empty() const { return layers_.empty(); }
  int in_features() const { return layers_.front().in_features(); }
  int out_features() const { return layers_.back().out_features(); }
  bool activate_last() const { return activate_last_; }
  std::vector<Dense<Scalar>>& layers() { return layers_; }
  const std::vector<Dense<Scalar>>& layers() const { return layers_; }

  Matrix<Scalar> forward(const Matrix<Scalar>& x, Cache* cache = nullptr) const {
    Matrix<Scalar> h = x;
    if (cache) {
      cache->inputs.clear();
      cache->outputs.clear();
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Matrix<Scalar> y = layers_[i].forward(h);
      if (rectified(i)) y = y.cwiseMax(Scalar(0));
      if (cache) cache->inputs.push_back(std::move(h));
      h = std::move(y);
      if (cache) cache->outputs.push_back(h);
    }
    return h;
  }

  Matrix<Scalar> backward(const Cache& cache, Matrix<Scalar> dy) {
    for (std::size_t i = layers_.size(); i-- > 0;) {
      if (rectified(i)) dy = (cache.outputs[i].array() > Scalar(0)).select(dy, Scalar(0));
      dy = layers_[i].backward(cache.inputs[i], dy);
    }
    return dy;
  }

  void zero_grad() {
    for (auto& l : layers_) l.zero_grad();
  }

  template <typename F>
  void visit(F&& f) {
    for (auto& l : layers_) l.visit(f);
  }
  template <typename F>
  void visit(F&& f) const {
    for (const auto& l : layers_) l.visit(f);
  }

 private:
  bool rectified(std::size_t i) const { return i + 1 < layers_.size() || activate_last_; }

  std::vector<Dense<Scalar>> layers_;
  bool activate_last_ = false;
};

/// Adam with coupled L2 weight decay (g += decay * theta) over the
/// parameters of one partition, visited in a fixed order.
template <typename Scalar>
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
  };

  Adam() = default;
  explicit Adam(Options options) : options_(options) {}

  void set_lr(double lr) { options_.lr = lr; }
  double lr() const { return options_.lr; }

  /// `visit` calls its argument with (param, grad) pairs.
  template <typename Visitor>
  void step(Visitor&& visit) {
    ++t_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    std::size_t slot = 0;
    visit([&](Matrix<Scalar>& param, const Matrix<Scalar>& grad) {
      if (slot == m_.size()) {
        m_.push_back(Matrix<Scalar>::Zero(param.rows(), param.cols()));
        v_.push_back(Matrix<Scalar>::Zero(param.rows(), param.cols()));
      }
      Matrix<Scalar>& m = m_[slot];
      Matrix<Scalar>& v = v_[slot];
      const Matrix<Scalar> g = grad + Scalar(options_.weight_decay) * param;
      m = Scalar(options_.beta1) * m + Scalar(1.0 - options_.beta1) * g;
      v = Scalar(options_.beta2) * v + Scalar(1.0 - options_.beta2) * g.cwiseProduct(g);
      const Scalar step = Scalar(options_.lr / c1);
      const Scalar root_c2 = Scalar(std::sqrt(c2));
      param.array() -= step * m.array() / ((v.array().sqrt() / root_c2) + Scalar(options_.eps));
      ++slot;
    });
  }

 private:
  Options options_;
  std::vector<Matrix<Scalar>> m_;
  std::vector<Matrix<Scalar>> v_;
  long t_ = 0;
};

}  // namespace cardood
