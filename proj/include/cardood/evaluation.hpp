#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cardood/workload.hpp"

namespace cardood {

/// max(c / est, est / c) with both inputs clamped to at least 1.
double q_error(double c, double est);

/// Nearest-rank percentile: the ceil(pct * n / 100)-th smallest value.
/// Throws UsageError on an empty sample or pct outside (0, 100].
double nearest_rank_quantile(std::span<const double> values, int pct);

inline constexpr std::array<int, 4> kReportPercentiles{50, 75, 95, 99};

struct GroupSummary {
  std::string name;
  std::size_t n = 0;
  /// False for groups with no test queries; `quantiles` is then meaningless.
  bool present = false;
  std::array<double, kReportPercentiles.size()> quantiles{};

  double quantile(int pct) const;
};

struct Prediction {
  double truth = 0.0;
  double estimate = 0.0;
  double q_error = 0.0;
};

struct EvalGroup {
  std::string name;
  std::vector<std::size_t> members;
};

struct QErrorReport {
  std::string algorithm;
  std::string arch;
  std::string split;  // e.g. "20/80 seed=3"
  double train_wall_time = 0.0;
  std::vector<GroupSummary> groups;
  std::vector<Prediction> predictions;

  /// Throws UsageError when no group has this name.
  const GroupSummary& group(std::string_view name) const;
};

/// overall, simple, complex, then one "template:<tag>" group per distinct
/// non-empty template tag.
std::vector<EvalGroup> evaluation_groups(const Workload& test, const SimpleDef& def);

QErrorReport quantile_report(std::span<const double> estimates, std::span<const double> truths,
                             const std::vector<EvalGroup>& groups);

struct ComparisonCell {
  std::string algorithm;
  std::string group;
  int percentile = 0;
  double value = 0.0;
  double baseline = 0.0;
  /// At least 20% below the ERM baseline's cell.
  bool flagged = false;
};

struct Comparison {
  std::vector<std::string> algorithms;  // ERM first
  std::vector<std::string> groups;
  std::vector<ComparisonCell> cells;

  std::size_t flag_count() const;
};

inline constexpr double kSignificantReduction = 0.2;

/// Throws DataError without an "erm" report or when reports disagree on the
/// split.
Comparison compare_algorithms(std::span<const QErrorReport> reports);

std::string report_to_json(const QErrorReport& r);
QErrorReport report_from_json(std::string_view text);
/// Aligned table, one row per group.
std::string report_to_text(const QErrorReport& r);
/// Raw per-query rows: truth,estimate,q_error.
std::string report_to_csv(const QErrorReport& r);

std::string comparison_to_json(const Comparison& c);
/// Rows: algorithm x group; columns: percentiles. Flagged cells carry '*'.
std::string comparison_to_text(const Comparison& c);

}  // namespace cardood
