#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cardood/model.hpp"
#include "cardood/workload.hpp"

namespace cardood {

enum class Algorithm { Erm, Coral, Dann, GroupDro, OrderEmb, Mixup, Masking };

std::string to_string(Algorithm a);
Algorithm parse_algorithm(std::string_view text);
/// CORAL, DANN and Group DRO need group labels.
bool needs_groups(Algorithm a);

struct TrainConfig {
  Algorithm algorithm = Algorithm::Erm;
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t epochs = 80;
  double weight_decay = 1e-4;
  double lr_decay = 0.85;
  /// Weight of the CORAL and order-embedding regularisers.
  double lambda = 0.5;
  /// 1e-2 for MLP and 1e-3 for MSCN in the reference configuration.
  double dann_ce_weight = 1e-2;
  /// Exponentiated-gradient step on the group weights.
  double dro_step = 0.01;
  double mixup_alpha = 0.5;
  double mixup_sigma = 0.1;
  double mask_prob = 0.1;
  std::size_t contrastive_k = 5;
  std::uint64_t seed = 0;
  /// Stop once the main loss changes by less than this (relative) over
  /// `convergence_window` epochs.
  double convergence_tol = 1e-5;
  std::size_t convergence_window = 5;

  /// Throws UsageError on out-of-range values.
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double main_loss = 0.0;
  double aux_loss = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;
};

struct TrainedModel {
  Model<float> model;
  std::vector<EpochRecord> history;
  double wall_time = 0.0;
  /// Full-workload MSE before the first and after the last epoch.
  double initial_loss = 0.0;
  double final_loss = 0.0;
  TrainConfig config;
};

using EpochCallback = std::function<void(const EpochRecord&, const Model<float>&)>;

/// Trains `model` on a labelled workload with the configured algorithm.
/// Deterministic for fixed (model, workload, config). Throws TrainingError on
/// an empty or unlabelled workload, or missing group labels for group-based
/// algorithms.
TrainedModel train(Model<float> model, const Workload& workload, const Database& db, const TrainConfig& cfg,
                   const EpochCallback& on_epoch = {});

/// Mean squared log error of `model` over a labelled workload.
double workload_mse(const Model<float>& model, const Workload& workload, const QueryEncoder& encoder);

/// Natural-log labels of a labelled workload.
std::vector<double> log_labels(const Workload& w);

// ---------------------------------------------------------------------------
// Algorithm primitives

/// Convex combination xi * a + (1 - xi) * b of encodings and of log labels.
std::pair<Eigen::VectorXd, double> mixup_pair(const Eigen::VectorXd& enc_i, const Eigen::VectorXd& enc_j,
                                              double log_label_i, double log_label_j, double xi);

/// Row `i` of the partner-sampling matrix: P[i, j] proportional to
/// exp(-(y_i - y_j)^2 / sigma^2) over j != i, normalised to sum to 1.
Eigen::VectorXd mixup_sampling_row(std::span<const double> log_labels, std::size_t i, double sigma);

/// Dense row-stochastic partner-sampling matrix with a zero diagonal.
Eigen::MatrixXd mixup_sampling_matrix(std::span<const double> log_labels, double sigma);

/// w'_i = w_i * exp(step * L_i), renormalised onto the simplex.
Eigen::VectorXd dro_weight_update(const Eigen::VectorXd& weights, const Eigen::VectorXd& group_losses, double step);

/// xi ~ Beta(alpha, alpha) via two Gamma draws.
double sample_beta(double alpha, std::mt19937_64& rng);

}  // namespace cardood
