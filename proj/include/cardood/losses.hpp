#pragma once

// Training losses and their analytic gradients. Batches store one sample per
// column: embeddings are d x n, group probabilities m x n.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>

#include "cardood/error.hpp"
#include "cardood/nn.hpp"

namespace cardood {

inline constexpr double kCrossEntropyFloor = 1e-12;

/// Mean squared difference of log-cardinalities.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar loss_mse(const Eigen::MatrixBase<DerivedA>& preds, const Eigen::MatrixBase<DerivedB>& labels) {
  if (preds.size() == 0) throw UsageError("MSE of an empty batch");
  if (preds.size() != labels.size()) throw UsageError("MSE inputs differ in length");
  return (preds.reshaped() - labels.reshaped()).squaredNorm() / static_cast<typename DerivedA::Scalar>(preds.size());
}

/// d loss_mse / d preds, shaped like `preds`.
template <typename DerivedA, typename DerivedB>
Matrix<typename DerivedA::Scalar> loss_mse_grad(const Eigen::MatrixBase<DerivedA>& preds,
                                                const Eigen::MatrixBase<DerivedB>& labels) {
  using Scalar = typename DerivedA::Scalar;
  if (preds.size() == 0) throw UsageError("MSE of an empty batch");
  const Scalar scale = Scalar(2) / static_cast<Scalar>(preds.size());
  Matrix<Scalar> g = (preds - labels) * scale;
  return g;
}

/// Unbiased feature covariance of a d x n batch.
template <typename Derived>
Matrix<typename Derived::Scalar> covariance(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.cols() < 2) throw UsageError("covariance needs at least two samples");
  const Matrix<Scalar> centred = x.colwise() - x.rowwise().mean();
  return centred * centred.transpose() / static_cast<Scalar>(x.cols() - 1);
}

/// (1 / 4d^2) * ||C_a - C_b||_F^2 between batch covariances.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar loss_coral(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.rows() != b.rows()) throw UsageError("CORAL inputs differ in embedding width");
  const Scalar d = static_cast<Scalar>(a.rows());
  return (covariance(a) - covariance(b)).squaredNorm() / (Scalar(4) * d * d);
}

template <typename Scalar>
struct CoralGrad {
  Matrix<Scalar> a;
  Matrix<Scalar> b;
};

/// Gradients of loss_coral with respect to both batches.
template <typename DerivedA, typename DerivedB>
CoralGrad<typename DerivedA::Scalar> loss_coral_grad(const Eigen::MatrixBase<DerivedA>& a,
                                                     const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  const Scalar d = static_cast<Scalar>(a.rows());
  // dL/dC_a = (C_a - C_b) / (2 d^2); dC/dX = 2/(n-1) * G * centred.
  const Matrix<Scalar> diff = (covariance(a) - covariance(b)) / (Scalar(2) * d * d);
  const Matrix<Scalar> ca = a.colwise() - a.rowwise().mean();
  const Matrix<Scalar> cb = b.colwise() - b.rowwise().mean();
  CoralGrad<Scalar> g;
  g.a = Scalar(2) / static_cast<Scalar>(a.cols() - 1) * diff * ca;
  g.b = -Scalar(2) / static_cast<Scalar>(b.cols() - 1) * diff * cb;
  return g;
}

/// Sum over the batch of -log p(true group), with a 1e-12 floor inside the
/// log. `labels` are 0-based group indices.
template <typename Derived>
typename Derived::Scalar loss_ce(const Eigen::MatrixBase<Derived>& probs, std::span<const int> labels) {
  using Scalar = typename Derived::Scalar;
  if (static_cast<std::size_t>(probs.cols()) != labels.size()) throw UsageError("CE label count mismatch");
  Scalar total = 0;
  for (Eigen::Index c = 0; c < probs.cols(); ++c) {
    const int g = labels[static_cast<std::size_t>(c)];
    if (g < 0 || g >= probs.rows()) throw UsageError("CE label outside the group range");
    total -= std::log(std::max(probs(g, c), Scalar(kCrossEntropyFloor)));
  }
  return total;
}

/// d loss_ce / d probs.
template <typename Derived>
Matrix<typename Derived::Scalar> loss_ce_grad(const Eigen::MatrixBase<Derived>& probs, std::span<const int> labels) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> g = Matrix<Scalar>::Zero(probs.rows(), probs.cols());
  for (Eigen::Index c = 0; c < probs.cols(); ++c) {
    const int g_idx = labels[static_cast<std::size_t>(c)];
    const Scalar p = probs(g_idx, c);
    if (p > Scalar(kCrossEntropyFloor)) g(g_idx, c) = -Scalar(1) / p;
  }
  return g;
}

/// d loss_ce(softmax(logits)) / d logits = probs - onehot, valid while no
/// true-class probability is below the floor.
template <typename Derived>
Matrix<typename Derived::Scalar> loss_ce_logit_grad(const Eigen::MatrixBase<Derived>& probs,
                                                    std::span<const int> labels) {
  Matrix<typename Derived::Scalar> g = probs;
  for (Eigen::Index c = 0; c < probs.cols(); ++c) g(labels[static_cast<std::size_t>(c)], c) -= 1;
  return g;
}

/// Sum over contrastive embeddings (columns of `subs`) of the squared norm of
/// max(sub - anchor, 0): zero exactly when every sub is coordinate-wise
/// dominated by the anchor.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar loss_order(const Eigen::MatrixBase<DerivedA>& anchor, const Eigen::MatrixBase<DerivedB>& subs) {
  using Scalar = typename DerivedA::Scalar;
  if (anchor.size() != subs.rows()) throw UsageError("order loss inputs differ in embedding width");
  Scalar total = 0;
  for (Eigen::Index k = 0; k < subs.cols(); ++k) {
    total += (subs.col(k) - anchor.reshaped()).cwiseMax(Scalar(0)).squaredNorm();
  }
  return total;
}

template <typename Scalar>
struct OrderGrad {
  Vector<Scalar> anchor;
  Matrix<Scalar> subs;
};

template <typename DerivedA, typename DerivedB>
OrderGrad<typename DerivedA::Scalar> loss_order_grad(const Eigen::MatrixBase<DerivedA>& anchor,
                                                     const Eigen::MatrixBase<DerivedB>& subs) {
  using Scalar = typename DerivedA::Scalar;
  OrderGrad<Scalar> g;
  g.subs = Matrix<Scalar>(subs.rows(), subs.cols());
  for (Eigen::Index k = 0; k < subs.cols(); ++k) {
    g.subs.col(k) = Scalar(2) * (subs.col(k) - anchor.reshaped()).cwiseMax(Scalar(0));
  }
  g.anchor = -g.subs.rowwise().sum();
  return g;
}

}  // namespace cardood
