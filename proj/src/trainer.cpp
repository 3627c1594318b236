#include "cardood/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

#include "cardood/error.hpp"
#include "cardood/losses.hpp"
#include "cardood/objectives.hpp"
#include "cardood/seed.hpp"

namespace cardood {

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Erm: return "erm";
    case Algorithm::Coral: return "coral";
    case Algorithm::Dann: return "dann";
    case Algorithm::GroupDro: return "dro";
    case Algorithm::OrderEmb: return "orderemb";
    case Algorithm::Mixup: return "mixup";
    case Algorithm::Masking: return "masking";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view text) {
  for (Algorithm a : {Algorithm::Erm, Algorithm::Coral, Algorithm::Dann, Algorithm::GroupDro, Algorithm::OrderEmb,
                      Algorithm::Mixup, Algorithm::Masking}) {
    if (text == to_string(a)) return a;
  }
  if (text == "groupdro" || text == "group-dro") return Algorithm::GroupDro;
  throw UsageError("unknown algorithm '" + std::string(text) + "'");
}

bool needs_groups(Algorithm a) {
  return a == Algorithm::Coral || a == Algorithm::Dann || a == Algorithm::GroupDro;
}

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw UsageError(std::string(name) + " must be positive");
  };
  positive(lr, "learning rate");
  positive(lr_decay, "learning-rate decay");
  positive(dann_ce_weight, "DANN CE weight");
  positive(dro_step, "DRO step");
  positive(mixup_alpha, "mixup alpha");
  positive(mixup_sigma, "mixup bandwidth");
  if (batch_size == 0) throw UsageError("batch size must be positive");
  if (epochs == 0) throw UsageError("epoch count must be positive");
  if (weight_decay < 0.0) throw UsageError("weight decay must be non-negative");
  if (lambda < 0.0) throw UsageError("lambda must be non-negative");
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) throw UsageError("mask probability must lie in [0, 1]");
  if (contrastive_k == 0) throw UsageError("contrastive sample count must be at least 1");
  if (convergence_window == 0) throw UsageError("convergence window must be positive");
}

std::vector<double> log_labels(const Workload& w) {
  std::vector<double> out;
  out.reserve(w.size());
  for (const SPJQuery& q : w.queries) {
    if (!q.cardinality) throw TrainingError("workload contains an unlabelled query");
    out.push_back(std::log(std::max<double>(1.0, static_cast<double>(*q.cardinality))));
  }
  return out;
}

std::pair<Eigen::VectorXd, double> mixup_pair(const Eigen::VectorXd& enc_i, const Eigen::VectorXd& enc_j,
                                              double log_label_i, double log_label_j, double xi) {
  if (enc_i.size() != enc_j.size()) throw UsageError("mixup encodings differ in width");
  if (!(xi >= 0.0 && xi <= 1.0)) throw UsageError("mixup weight must lie in [0, 1]");
  return {xi * enc_i + (1.0 - xi) * enc_j, xi * log_label_i + (1.0 - xi) * log_label_j};
}

Eigen::VectorXd mixup_sampling_row(std::span<const double> labels, std::size_t i, double sigma) {
  if (!(sigma > 0.0)) throw UsageError("mixup bandwidth must be positive");
  if (labels.size() < 2) throw UsageError("mixup needs at least two queries");
  const std::size_t n = labels.size();
  // Shift by the nearest distance so the kernel never underflows to all-zero.
  double nearest = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (j != i) nearest = std::min(nearest, (labels[i] - labels[j]) * (labels[i] - labels[j]));
  }
  Eigen::VectorXd row(static_cast<Eigen::Index>(n));
  const double s2 = sigma * sigma;
  for (std::size_t j = 0; j < n; ++j) {
    const double d2 = (labels[i] - labels[j]) * (labels[i] - labels[j]);
    row[static_cast<Eigen::Index>(j)] = j == i ? 0.0 : std::exp(-(d2 - nearest) / s2);
  }
  return row / row.sum();
}

Eigen::MatrixXd mixup_sampling_matrix(std::span<const double> labels, double sigma) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  Eigen::MatrixXd p(n, n);
  for (Eigen::Index i = 0; i < n; ++i) p.row(i) = mixup_sampling_row(labels, static_cast<std::size_t>(i), sigma).transpose();
  return p;
}

Eigen::VectorXd dro_weight_update(const Eigen::VectorXd& weights, const Eigen::VectorXd& group_losses, double step) {
  if (weights.size() != group_losses.size()) throw UsageError("DRO weights and losses differ in length");
  Eigen::VectorXd w = weights.array() * (step * group_losses.array()).exp();
  return w / w.sum();
}

double sample_beta(double alpha, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double x = gamma(rng);
  const double y = gamma(rng);
  if (x + y == 0.0) return 0.5;
  return x / (x + y);
}

namespace {

using Clock = std::chrono::steady_clock;
using MatrixF = Matrix<float>;

using StepLoss = StepLosses;

// Tiny Adam moments late in a decayed schedule are subnormal and slow float
// arithmetic down several-fold; flush them to zero for the duration of a run.
class FlushDenormals {
 public:
#if defined(__SSE__)
  FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040); }
  ~FlushDenormals() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
};

class Trainer {
 public:
  Trainer(Model<float> model, const Workload& w, const Database& db, const TrainConfig& cfg)
      : model_(std::move(model)),
        workload_(w),
        cfg_(cfg),
        encoder_(db),
        batch_rng_(derive_seed(cfg.seed, "batches")),
        mask_rng_(derive_seed(cfg.seed, "mask")),
        aux_rng_(derive_seed(cfg.seed, "auxiliary")),
        opt_h_({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}),
        opt_c_({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}),
        opt_g_({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}) {
    labels_ = log_labels(w);
    if (model_.arch() == Arch::Mlp) {
      for (const SPJQuery& q : w.queries) fixed_.push_back(encoder_.encode_fixed(q));
    } else {
      for (const SPJQuery& q : w.queries) sets_.push_back(encoder_.encode_set(q));
    }
    if (needs_groups(cfg.algorithm)) {
      groups_ = w.num_groups();
      group_members_.resize(static_cast<std::size_t>(groups_));
      for (std::size_t i = 0; i < w.size(); ++i) {
        group_members_[static_cast<std::size_t>(w.group_of[i] - 1)].push_back(i);
      }
      dro_weights_ = Eigen::VectorXd::Constant(groups_, 1.0 / groups_);
    }
    if (cfg.algorithm == Algorithm::Dann && (!model_.has_discriminator() || model_.dims().groups != groups_)) {
      model_.enable_discriminator(groups_);
    }
  }

  TrainedModel run(const EpochCallback& on_epoch) {
    TrainedModel out;
    out.config = cfg_;
    const auto start = Clock::now();
    out.initial_loss = workload_mse(model_, workload_, encoder_);
    for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
      const double lr = cfg_.lr * std::pow(cfg_.lr_decay, static_cast<double>(epoch));
      opt_h_.set_lr(lr);
      opt_c_.set_lr(lr);
      opt_g_.set_lr(lr);
      const StepLoss loss = cfg_.algorithm == Algorithm::Coral ? coral_epoch() : batched_epoch();
      EpochRecord rec{epoch + 1, loss.main, loss.aux, lr,
                      std::chrono::duration<double>(Clock::now() - start).count()};
      out.history.push_back(rec);
      if (on_epoch) on_epoch(rec, model_);
      if (!std::isfinite(loss.main)) throw TrainingError("training diverged at epoch " + std::to_string(epoch + 1));
      if (converged(out.history)) break;
    }
    out.final_loss = workload_mse(model_, workload_, encoder_);
    out.wall_time = std::chrono::duration<double>(Clock::now() - start).count();
    out.model = std::move(model_);
    return out;
  }

 private:
  bool converged(const std::vector<EpochRecord>& h) const {
    const std::size_t wnd = cfg_.convergence_window;
    if (h.size() <= wnd) return false;
    const double before = h[h.size() - 1 - wnd].main_loss;
    const double now = h.back().main_loss;
    // Absolute change: sampled epoch losses fluctuate up as well as down.
    return std::abs(before - now) / std::max(std::abs(before), 1e-12) < cfg_.convergence_tol;
  }

  Batch<float> gather(std::span<const std::size_t> idx, bool masked) {
    if (model_.arch() == Arch::Mlp) {
      std::vector<FixedEncoding> masked_copies;
      std::vector<const FixedEncoding*> ptrs;
      if (masked) {
        masked_copies.reserve(idx.size());
        for (std::size_t i : idx) masked_copies.push_back(mask_selections(fixed_[i], cfg_.mask_prob, mask_rng_));
        for (const auto& e : masked_copies) ptrs.push_back(&e);
      } else {
        for (std::size_t i : idx) ptrs.push_back(&fixed_[i]);
      }
      return make_batch<float>(std::span<const FixedEncoding* const>(ptrs));
    }
    std::vector<SetEncoding> masked_copies;
    std::vector<const SetEncoding*> ptrs;
    if (masked) {
      masked_copies.reserve(idx.size());
      for (std::size_t i : idx) masked_copies.push_back(mask_selections(sets_[i], cfg_.mask_prob, mask_rng_));
      for (const auto& e : masked_copies) ptrs.push_back(&e);
    } else {
      for (std::size_t i : idx) ptrs.push_back(&sets_[i]);
    }
    return make_batch<float>(std::span<const SetEncoding* const>(ptrs));
  }

  MatrixF label_row(std::span<const std::size_t> idx) const {
    MatrixF y(1, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) y(0, static_cast<Eigen::Index>(k)) = static_cast<float>(labels_[idx[k]]);
    return y;
  }

  void step_model() {
    opt_h_.step([&](auto&& f) { model_.visit_extractor(f); });
    opt_c_.step([&](auto&& f) { model_.visit_predictor(f); });
  }

  // Shuffled pass over the workload; used by every algorithm except CORAL.
  StepLoss batched_epoch() {
    std::vector<std::size_t> order(labels_.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), batch_rng_);
    StepLoss sum;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg_.batch_size);
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      StepLoss l;
      switch (cfg_.algorithm) {
        case Algorithm::Erm: l = erm_step(idx, false); break;
        case Algorithm::Masking: l = erm_step(idx, true); break;
        case Algorithm::GroupDro: l = dro_step(idx); break;
        case Algorithm::Dann: l = dann_step(idx); break;
        case Algorithm::OrderEmb: l = order_step(idx); break;
        case Algorithm::Mixup: l = mixup_step(idx); break;
        case Algorithm::Coral: break;
      }
      sum.main += l.main;
      sum.aux += l.aux;
      ++steps;
    }
    return {sum.main / static_cast<double>(steps), sum.aux / static_cast<double>(steps)};
  }

  StepLoss erm_step(std::span<const std::size_t> idx, bool masked) {
    const Batch<float> batch = gather(idx, masked);
    model_.zero_grad();
    const StepLoss l = erm_objective(model_, batch, label_row(idx));
    step_model();
    return l;
  }

  // Per-group MSE drives the weight update; the model descends the
  // weight-averaged group losses. Groups absent from the batch contribute 0.
  StepLoss dro_step(std::span<const std::size_t> idx) {
    const Batch<float> batch = gather(idx, false);
    const MatrixF y = label_row(idx);
    model_.zero_grad();
    const auto f = model_.forward(batch);
    const auto n = static_cast<Eigen::Index>(idx.size());
    std::vector<std::vector<Eigen::Index>> cols(static_cast<std::size_t>(groups_));
    for (Eigen::Index c = 0; c < n; ++c) {
      cols[static_cast<std::size_t>(workload_.group_of[idx[static_cast<std::size_t>(c)]] - 1)].push_back(c);
    }
    Eigen::VectorXd losses = Eigen::VectorXd::Zero(groups_);
    std::vector<MatrixF> grads(static_cast<std::size_t>(groups_));
    for (int g = 0; g < groups_; ++g) {
      const auto& members = cols[static_cast<std::size_t>(g)];
      if (members.empty()) continue;
      const MatrixF pg = f.log_card(Eigen::all, members);
      const MatrixF yg = y(Eigen::all, members);
      losses[g] = loss_mse(pg, yg);
      grads[static_cast<std::size_t>(g)] = loss_mse_grad(pg, yg);
    }
    dro_weights_ = dro_weight_update(dro_weights_, losses, cfg_.dro_step);
    MatrixF d_log = MatrixF::Zero(1, n);
    for (int g = 0; g < groups_; ++g) {
      const auto& members = cols[static_cast<std::size_t>(g)];
      const float w = static_cast<float>(dro_weights_[g]);
      for (std::size_t k = 0; k < members.size(); ++k) {
        d_log(0, members[k]) = w * grads[static_cast<std::size_t>(g)](0, static_cast<Eigen::Index>(k));
      }
    }
    model_.backward(batch, f, d_log);
    step_model();
    return {loss_mse(f.log_card, y), dro_weights_.dot(losses)};
  }

  StepLoss dann_step(std::span<const std::size_t> idx) {
    const Batch<float> batch = gather(idx, false);
    std::vector<int> groups;
    for (std::size_t i : idx) groups.push_back(workload_.group_of[i] - 1);
    model_.zero_grad();
    const StepLoss l = dann_objective(model_, batch, label_row(idx), groups, cfg_.dann_ce_weight);
    step_model();
    opt_g_.step([&](auto&& fn) { model_.visit_discriminator(fn); });
    return {l.main, l.aux / static_cast<double>(idx.size())};
  }

  // Anchors and their contrastive queries go through one forward pass.
  StepLoss order_step(std::span<const std::size_t> idx) {
    std::vector<SPJQuery> subs;
    std::vector<ContrastiveSpan> spans;
    for (std::size_t i : idx) {
      const SPJQuery& q = workload_.queries[i];
      const auto first = static_cast<Eigen::Index>(subs.size());
      if (!q.selections.empty()) {
        auto s = sample_contrastive_queries(q, cfg_.contrastive_k, aux_rng_);
        subs.insert(subs.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
      }
      spans.push_back({first, static_cast<Eigen::Index>(subs.size()) - first});
    }
    Batch<float> batch;
    if (model_.arch() == Arch::Mlp) {
      std::vector<FixedEncoding> enc;
      enc.reserve(subs.size());
      for (const SPJQuery& s : subs) enc.push_back(encoder_.encode_fixed(s));
      std::vector<const FixedEncoding*> ptrs;
      for (std::size_t i : idx) ptrs.push_back(&fixed_[i]);
      for (const auto& e : enc) ptrs.push_back(&e);
      batch = make_batch<float>(std::span<const FixedEncoding* const>(ptrs));
    } else {
      std::vector<SetEncoding> enc;
      enc.reserve(subs.size());
      for (const SPJQuery& s : subs) enc.push_back(encoder_.encode_set(s));
      std::vector<const SetEncoding*> ptrs;
      for (std::size_t i : idx) ptrs.push_back(&sets_[i]);
      for (const auto& e : enc) ptrs.push_back(&e);
      batch = make_batch<float>(std::span<const SetEncoding* const>(ptrs));
    }
    model_.zero_grad();
    const StepLoss l = order_objective(model_, batch, label_row(idx), spans, cfg_.lambda);
    step_model();
    return l;
  }

  // Partners drawn from the label-distance kernel.
  StepLoss mixup_step(std::span<const std::size_t> idx) {
    const auto n = static_cast<Eigen::Index>(idx.size());
    std::vector<std::size_t> partners;
    RowVector<float> xi(n);
    MatrixF y(1, n);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (Eigen::Index k = 0; k < n; ++k) {
      const std::size_t i = idx[static_cast<std::size_t>(k)];
      const Eigen::VectorXd row = mixup_sampling_row(labels_, i, cfg_.mixup_sigma);
      const double u = unit(aux_rng_);
      double acc = 0.0;
      std::size_t j = i == 0 ? 1 : 0;
      for (Eigen::Index c = 0; c < row.size(); ++c) {
        if (row[c] <= 0.0) continue;
        j = static_cast<std::size_t>(c);
        acc += row[c];
        if (acc >= u) break;
      }
      const double w = sample_beta(cfg_.mixup_alpha, aux_rng_);
      partners.push_back(j);
      xi[k] = static_cast<float>(w);
      y(0, k) = static_cast<float>(w * labels_[i] + (1.0 - w) * labels_[j]);
    }
    const Batch<float> a = gather(idx, false);
    const Batch<float> b = gather(partners, false);
    model_.zero_grad();
    const StepLoss l = mixup_objective(model_, a, b, xi, y);
    step_model();
    return l;
  }

  std::vector<std::size_t> sample_group_batch(int g) {
    std::vector<std::size_t> members = group_members_[static_cast<std::size_t>(g)];
    const std::size_t take = std::min(cfg_.batch_size, members.size());
    for (std::size_t k = 0; k < take; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, members.size() - 1);
      std::swap(members[k], members[pick(batch_rng_)]);
    }
    members.resize(take);
    return members;
  }

  // Two groups drawn proportionally to their size, one batch from each.
  StepLoss coral_epoch() {
    std::vector<double> sizes;
    for (const auto& m : group_members_) sizes.push_back(static_cast<double>(m.size()));
    const std::size_t steps = std::max<std::size_t>(1, (labels_.size() + 2 * cfg_.batch_size - 1) / (2 * cfg_.batch_size));
    StepLoss sum;
    for (std::size_t s = 0; s < steps; ++s) {
      std::discrete_distribution<int> pick_first(sizes.begin(), sizes.end());
      const int gi = pick_first(batch_rng_);
      int gj = gi;
      if (groups_ > 1) {
        std::vector<double> rest = sizes;
        rest[static_cast<std::size_t>(gi)] = 0.0;
        if (std::any_of(rest.begin(), rest.end(), [](double v) { return v > 0; })) {
          std::discrete_distribution<int> pick_second(rest.begin(), rest.end());
          gj = pick_second(batch_rng_);
        }
      }
      const auto bi = sample_group_batch(gi);
      const auto bj = sample_group_batch(gj);
      const Batch<float> xi = gather(bi, false);
      const Batch<float> xj = gather(bj, false);
      model_.zero_grad();
      const StepLoss l = coral_objective(model_, xi, label_row(bi), xj, label_row(bj), cfg_.lambda);
      step_model();
      sum.main += l.main;
      sum.aux += l.aux;
    }
    return {sum.main / static_cast<double>(steps), sum.aux / static_cast<double>(steps)};
  }

  Model<float> model_;
  const Workload& workload_;
  TrainConfig cfg_;
  QueryEncoder encoder_;
  std::vector<double> labels_;
  std::vector<FixedEncoding> fixed_;
  std::vector<SetEncoding> sets_;
  int groups_ = 0;
  std::vector<std::vector<std::size_t>> group_members_;
  Eigen::VectorXd dro_weights_;
  std::mt19937_64 batch_rng_;
  std::mt19937_64 mask_rng_;
  std::mt19937_64 aux_rng_;
  Adam<float> opt_h_, opt_c_, opt_g_;
};

}  // namespace

double workload_mse(const Model<float>& model, const Workload& workload, const QueryEncoder& encoder) {
  if (workload.empty()) return 0.0;
  const std::vector<double> labels = log_labels(workload);
  double total = 0.0;
  constexpr std::size_t kChunk = 512;
  for (std::size_t begin = 0; begin < workload.size(); begin += kChunk) {
    const std::size_t end = std::min(workload.size(), begin + kChunk);
    Batch<float> batch;
    if (model.arch() == Arch::Mlp) {
      std::vector<FixedEncoding> enc;
      for (std::size_t i = begin; i < end; ++i) enc.push_back(encoder.encode_fixed(workload.queries[i]));
      std::vector<const FixedEncoding*> ptrs;
      for (const auto& e : enc) ptrs.push_back(&e);
      batch = make_batch<float>(std::span<const FixedEncoding* const>(ptrs));
    } else {
      std::vector<SetEncoding> enc;
      for (std::size_t i = begin; i < end; ++i) enc.push_back(encoder.encode_set(workload.queries[i]));
      std::vector<const SetEncoding*> ptrs;
      for (const auto& e : enc) ptrs.push_back(&e);
      batch = make_batch<float>(std::span<const SetEncoding* const>(ptrs));
    }
    const auto f = model.forward(batch);
    for (std::size_t i = begin; i < end; ++i) {
      const double diff = static_cast<double>(f.log_card(0, static_cast<Eigen::Index>(i - begin))) - labels[i];
      total += diff * diff;
    }
  }
  return total / static_cast<double>(workload.size());
}

TrainedModel train(Model<float> model, const Workload& workload, const Database& db, const TrainConfig& cfg,
                   const EpochCallback& on_epoch) {
  cfg.validate();
  if (workload.empty()) throw TrainingError("training workload is empty");
  if (needs_groups(cfg.algorithm) && workload.group_of.size() != workload.size()) {
    throw TrainingError(to_string(cfg.algorithm) + " needs group labels on every training query");
  }
  if (cfg.algorithm == Algorithm::Mixup && workload.size() < 2) {
    throw TrainingError("mixup needs at least two training queries");
  }
  const FlushDenormals ftz;
  Trainer trainer(std::move(model), workload, db, cfg);
  return trainer.run(on_epoch);
}

}  // namespace cardood
