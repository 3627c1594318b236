#pragma once

// One optimisation step's objective per algorithm: forward, loss, and
// gradient accumulation into the model. Templated so the trainer runs them in
// float and the gradient checks in double.

#include <span>
#include <utility>
#include <vector>

#include "cardood/losses.hpp"
#include "cardood/model.hpp"

namespace cardood {

struct StepLosses {
  double main = 0.0;
  double aux = 0.0;
};

/// Gradients of loss_mse(log_card, y).
template <typename Scalar>
StepLosses erm_objective(Model<Scalar>& model, const Batch<Scalar>& batch, const Matrix<Scalar>& y) {
  const auto f = model.forward(batch);
  const double loss = static_cast<double>(loss_mse(f.log_card, y));
  model.backward(batch, f, loss_mse_grad(f.log_card, y));
  return {loss, 0.0};
}

/// Gradient reversal. Extractor and predictor receive the gradient of
/// mse - w * ce; the discriminator receives that of w * ce. `groups` are
/// 0-based.
template <typename Scalar>
StepLosses dann_objective(Model<Scalar>& model, const Batch<Scalar>& batch, const Matrix<Scalar>& y,
                          std::span<const int> groups, double weight) {
  const auto f = model.forward(batch);
  const double mse = static_cast<double>(loss_mse(f.log_card, y));
  const double ce = static_cast<double>(loss_ce(f.group_probs, groups));
  const Scalar w = static_cast<Scalar>(weight);
  const Matrix<Scalar> d_emb_mse = model.backward_head(f, loss_mse_grad(f.log_card, y));
  const Matrix<Scalar> d_emb_ce = model.backward_discriminator(f, w * loss_ce_logit_grad(f.group_probs, groups));
  model.backward_pool(batch, f.pool, model.backward_extractor(f, d_emb_mse - d_emb_ce));
  return {mse, ce};
}

/// mse(B_i) + mse(B_j) + lambda * coral(h(B_i), h(B_j)). The CORAL term is
/// skipped when either batch has fewer than two rows. `main` is the mean of
/// the two MSEs.
template <typename Scalar>
StepLosses coral_objective(Model<Scalar>& model, const Batch<Scalar>& bi, const Matrix<Scalar>& yi,
                           const Batch<Scalar>& bj, const Matrix<Scalar>& yj, double lambda) {
  const auto fi = model.forward(bi);
  const auto fj = model.forward(bj);
  const double mse = static_cast<double>(loss_mse(fi.log_card, yi)) + static_cast<double>(loss_mse(fj.log_card, yj));
  Matrix<Scalar> d_ei = Matrix<Scalar>::Zero(fi.embedding.rows(), fi.embedding.cols());
  Matrix<Scalar> d_ej = Matrix<Scalar>::Zero(fj.embedding.rows(), fj.embedding.cols());
  double coral = 0.0;
  if (fi.embedding.cols() >= 2 && fj.embedding.cols() >= 2) {
    coral = static_cast<double>(loss_coral(fi.embedding, fj.embedding));
    const auto g = loss_coral_grad(fi.embedding, fj.embedding);
    d_ei = static_cast<Scalar>(lambda) * g.a;
    d_ej = static_cast<Scalar>(lambda) * g.b;
  }
  model.backward(bi, fi, loss_mse_grad(fi.log_card, yi), &d_ei);
  model.backward(bj, fj, loss_mse_grad(fj.log_card, yj), &d_ej);
  return {mse / 2.0, coral};
}

/// Contrastive span of one anchor: [first, first + count) among the
/// contrastive columns that follow the anchors in the batch.
struct ContrastiveSpan {
  Eigen::Index first = 0;
  Eigen::Index count = 0;
};

/// mse(anchors) + (lambda / n) * sum over anchors of loss_order. The batch
/// holds the n anchors first, then all contrastive queries. `aux` is the
/// order loss averaged over anchors.
template <typename Scalar>
StepLosses order_objective(Model<Scalar>& model, const Batch<Scalar>& batch, const Matrix<Scalar>& y,
                           std::span<const ContrastiveSpan> spans, double lambda) {
  const auto n = static_cast<Eigen::Index>(spans.size());
  const auto f = model.forward(batch);
  const Matrix<Scalar> anchors_log = f.log_card.leftCols(n);
  const double mse = static_cast<double>(loss_mse(anchors_log, y));
  Matrix<Scalar> d_log = Matrix<Scalar>::Zero(1, batch.size);
  d_log.leftCols(n) = loss_mse_grad(anchors_log, y);
  Matrix<Scalar> d_emb = Matrix<Scalar>::Zero(f.embedding.rows(), batch.size);
  double order = 0.0;
  const Scalar scale = static_cast<Scalar>(lambda / static_cast<double>(n));
  for (Eigen::Index a = 0; a < n; ++a) {
    const ContrastiveSpan s = spans[static_cast<std::size_t>(a)];
    if (s.count == 0) continue;
    const auto anchor = f.embedding.col(a);
    const auto subs = f.embedding.middleCols(n + s.first, s.count);
    order += static_cast<double>(loss_order(anchor, subs));
    const auto g = loss_order_grad(anchor, subs);
    d_emb.col(a) += scale * g.anchor;
    d_emb.middleCols(n + s.first, s.count) += scale * g.subs;
  }
  model.backward(batch, f, d_log, &d_emb);
  return {mse, order / static_cast<double>(n)};
}

/// Mixup on the extractor input: pooled(A) and pooled(B) are mixed column
/// by column with weights xi, and the MSE against `y` is minimised.
template <typename Scalar>
StepLosses mixup_objective(Model<Scalar>& model, const Batch<Scalar>& a, const Batch<Scalar>& b,
                           const RowVector<Scalar>& xi, const Matrix<Scalar>& y) {
  const auto pa = model.pool(a);
  const auto pb = model.pool(b);
  Matrix<Scalar> mixed =
      (pa.pooled.array().rowwise() * xi.array() + pb.pooled.array().rowwise() * (Scalar(1) - xi.array())).matrix();
  const auto f = model.forward_pooled(std::move(mixed));
  const double loss = static_cast<double>(loss_mse(f.log_card, y));
  const Matrix<Scalar> d_pooled = model.backward_extractor(f, model.backward_head(f, loss_mse_grad(f.log_card, y)));
  model.backward_pool(a, pa, (d_pooled.array().rowwise() * xi.array()).matrix());
  model.backward_pool(b, pb, (d_pooled.array().rowwise() * (Scalar(1) - xi.array())).matrix());
  return {loss, 0.0};
}

}  // namespace cardood
