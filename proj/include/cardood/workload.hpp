#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "cardood/query.hpp"

namespace cardood {

enum class GroupRule { BySelectionCount, ByJoinCount, ByTemplate };

GroupRule parse_group_rule(std::string_view text);
std::string to_string(GroupRule rule);

/// Labelled queries with group ids 1..m; `group_of` is empty until the
/// workload is partitioned.
struct Workload {
  std::vector<SPJQuery> queries;
  std::vector<int> group_of;
  GroupRule group_rule = GroupRule::BySelectionCount;

  std::size_t size() const { return queries.size(); }
  bool empty() const { return queries.empty(); }
  int num_groups() const;
  /// New workload with the queries at `indices`, keeping their group ids.
  Workload subset(const std::vector<std::size_t>& indices) const;
};

/// Groups are numbered 1..m in ascending order of the group key.
Workload partition_workload(Workload w, GroupRule rule);

/// Simple queries have at most `max_count` selections (or joins).
struct SimpleDef {
  GroupRule by = GroupRule::BySelectionCount;
  std::size_t max_count = 6;
  bool is_simple(const SPJQuery& q) const;
};

/// Integer parts keep the simple:complex proportion exact in counts, e.g.
/// {20, 80}.
struct SplitSpec {
  SimpleDef simple_def;
  std::pair<int, int> ratio{50, 50};
  double test_fraction = 0.10;
  std::uint64_t seed = 0;

  void validate() const;
};

/// "20/80", "0.2/0.8" or "1:4" -> integer parts.
std::pair<int, int> parse_ratio(std::string_view text);

struct Split {
  Workload train;
  Workload test;
};

/// Test: a `test_fraction` sample stratified over groups. Train: simple and
/// complex queries from the remainder in exactly the requested proportion,
/// downsampling the over-represented class.
Split build_skewed_split(const Workload& w, const SplitSpec& spec);

/// Labels each query with exact_cardinality, drops empty results and
/// structural duplicates (first occurrence wins).
Workload label_and_filter(const Database& db, std::vector<SPJQuery> queries);

/// JSON-lines, one object per query:
/// {relations, selections, joins, cardinality, group, template}.
void write_workload(std::ostream& out, const Workload& w, const Database& db);
void write_workload(const std::filesystem::path& path, const Workload& w, const Database& db);
Workload read_workload(std::istream& in, const Database& db);
Workload read_workload(const std::filesystem::path& path, const Database& db);

/// One query object (no trailing newline) and its inverse; the inverse throws
/// DataError on malformed input.
std::string query_to_json(const SPJQuery& q, const Database& db, int group = 0);
SPJQuery query_from_json(std::string_view line, const Database& db, int* group = nullptr);

}  // namespace cardood
