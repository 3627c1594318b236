#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cardood/model.hpp"
#include "cardood/synthetic.hpp"
#include "cardood/trainer.hpp"
#include "cardood/workload.hpp"

namespace cardood {

/// Environment variable naming the default config file.
inline constexpr const char* kConfigEnv = "CARDOOD_CONFIG";

/// One experiment, read from a single JSON document. Relative paths resolve
/// against `base_dir` (the config file's directory).
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path base_dir = ".";

  SyntheticDatabaseSpec data;
  std::filesystem::path data_dir = "data";

  enum class WorkloadKind { SingleTable, Join };
  WorkloadKind workload_kind = WorkloadKind::SingleTable;
  std::string workload_table = "t0";
  /// Selection counts (single-table) or join counts (join) to generate.
  std::vector<std::size_t> counts{2, 3, 4};
  std::size_t queries_per_count = 100;
  JoinQueryOptions join_options;
  std::filesystem::path workload_path = "workload.jsonl";

  SplitSpec split;
  GroupRule group_rule = GroupRule::BySelectionCount;
  std::filesystem::path split_dir = "split";

  TrainConfig train;
  Arch arch = Arch::Mlp;
  std::vector<double> lr_grid{1e-3};
  std::vector<std::size_t> batch_grid{64};
  std::vector<std::size_t> epoch_grid{80};
  double validation_fraction = 0.1;
  std::filesystem::path checkpoint_dir = "checkpoints";

  std::filesystem::path report_dir = "reports";

  std::optional<std::filesystem::path> serve_checkpoint;
  std::uint16_t port = 7878;
  std::size_t workers = 1;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  /// Throws UsageError on empty grids or out-of-range values.
  void validate() const;
};

/// Throws UsageError on unknown keys or ill-typed values.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);

struct GridPointResult {
  double lr = 0.0;
  std::size_t batch_size = 0;
  std::size_t epochs = 0;
  std::string checksum;
  std::filesystem::path checkpoint;
  double validation_mse = 0.0;
  bool skipped = false;  // already completed by an earlier run
};

struct TrainSummary {
  std::vector<GridPointResult> points;
  std::size_t best = 0;
};

void cmd_gen_data(const ExperimentConfig& cfg, std::ostream& log);
/// Returns the number of labelled queries written.
std::size_t cmd_gen_workload(const ExperimentConfig& cfg, std::ostream& log);
TrainSummary cmd_train(const ExperimentConfig& cfg, std::ostream& log);
/// Reports every trained (algorithm, arch) pair, or only cfg's pair when
/// `only_configured` is set. Returns the report files written.
std::vector<std::filesystem::path> cmd_eval(const ExperimentConfig& cfg, std::ostream& log, bool only_configured);
/// Rebuilds text tables and comparisons from the JSON reports.
void cmd_report(const ExperimentConfig& cfg, std::ostream& log);
/// Runs until SIGINT/SIGTERM.
void cmd_serve(const ExperimentConfig& cfg, std::ostream& log);

/// Best-checkpoint marker path for an (algorithm, arch) pair.
std::filesystem::path best_marker_path(const ExperimentConfig& cfg, Algorithm algorithm, Arch arch);

/// Full command line: parses flags, runs the subcommand, maps errors to exit
/// codes (0 ok, 1 usage, 2 data, 3 training).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cardood
