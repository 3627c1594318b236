#pragma once

#include <cstddef>
#include <cstdint>
#include <compare>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cardood {

inline constexpr std::size_t kDefaultMaxCategories = 64;

enum class AttributeKind { Numerical, Categorical };

/// Column metadata. Numerical columns carry a closed interval [min, max];
/// categorical columns an ordered domain whose order fixes bitmap bit
/// positions for the lifetime of the schema.
struct AttributeMeta {
  std::string name;
  AttributeKind kind = AttributeKind::Numerical;
  double min = 0.0;
  double max = 1.0;
  std::vector<std::string> categories;
  /// Domain is taken from the data at load time.
  bool infer_domain = false;
  /// Key columns used only as join attributes are not selectable.
  bool selectable = true;
  /// Categorical predicates are encoded as ordinal ranges instead of bitmaps.
  bool range_encodable = false;

  static AttributeMeta numerical(std::string name, double min, double max);
  static AttributeMeta categorical(std::string name, std::vector<std::string> categories);

  bool is_numerical() const { return kind == AttributeKind::Numerical; }
  std::size_t domain_size() const { return categories.size(); }
  double width() const { return max - min; }

  /// Throws DataError when the domain is malformed.
  void validate(std::size_t max_categories = kDefaultMaxCategories) const;
  /// Index of `value` in the categorical domain, if present.
  std::optional<int> category_index(std::string_view value) const;
  bool contains(double value) const;
};

/// Column-major in-memory relation. Categorical cells hold the index of the
/// value in the attribute's domain.
struct Table {
  std::string name;
  std::vector<AttributeMeta> attributes;
  std::vector<std::vector<double>> columns;

  std::size_t num_rows() const { return columns.empty() ? 0 : columns.front().size(); }
  std::size_t num_attributes() const { return attributes.size(); }
  /// Throws DataError for unknown names.
  std::size_t attribute_index(std::string_view attribute) const;
  const AttributeMeta& attribute(std::string_view attribute) const;
  double at(std::size_t row, std::size_t column) const { return columns[column][row]; }

  void validate(std::size_t max_categories = kDefaultMaxCategories) const;
};

struct AttributeRef {
  std::string table;
  std::string attribute;

  std::string to_string() const { return table + "." + attribute; }
  /// Parses "table.attribute"; throws DataError on malformed input.
  static AttributeRef parse(std::string_view text);

  friend auto operator<=>(const AttributeRef&, const AttributeRef&) = default;
  friend bool operator==(const AttributeRef&, const AttributeRef&) = default;
};

/// Unordered equi-join pair; `canonical()` puts the smaller side left.
struct JoinPair {
  AttributeRef left;
  AttributeRef right;

  JoinPair canonical() const;
  std::string to_string() const { return left.to_string() + "=" + right.to_string(); }

  friend auto operator<=>(const JoinPair&, const JoinPair&) = default;
  friend bool operator==(const JoinPair&, const JoinPair&) = default;
};

/// Named tables plus the fixed set of joinable attribute pairs.
class Database {
 public:
  void add_table(Table table);
  /// Registers a join pair; throws DataError on unknown attributes,
  /// incompatible kinds or duplicates.
  void add_join(const JoinPair& pair);

  const std::vector<Table>& tables() const { return tables_; }
  const Table& table(std::string_view name) const;
  bool has_table(std::string_view name) const;
  std::size_t table_index(std::string_view name) const;
  const AttributeMeta& attribute(const AttributeRef& ref) const;

  const std::vector<JoinPair>& join_graph() const { return joins_; }
  std::optional<std::size_t> join_index(const JoinPair& pair) const;
  /// Tables adjacent to `name` in the join graph, with the connecting pair.
  std::vector<std::pair<std::string, std::size_t>> neighbours(std::string_view name) const;

 private:
  std::vector<Table> tables_;
  std::vector<JoinPair> joins_;
};

/// Schema entry as read from a JSON sidecar: [{name, kind, domain | "infer"}].
std::vector<AttributeMeta> load_schema(const std::filesystem::path& path);
void save_schema(const std::filesystem::path& path, const std::vector<AttributeMeta>& schema);

/// Loads a headed CSV file under `schema`. Attributes flagged `infer_domain`
/// get their domain from the data.
Table load_table(const std::filesystem::path& path, std::vector<AttributeMeta> schema,
                 std::string name = {});
void save_table_csv(const std::filesystem::path& path, const Table& table);

/// Manifest JSON: {"tables": [{"name", "csv", "schema"}], "joins": [{"left", "right"}]},
/// paths relative to the manifest.
Database load_database(const std::filesystem::path& manifest);
void save_database(const std::filesystem::path& directory, const Database& db,
                   std::string_view manifest_name = "manifest.json");

}  // namespace cardood
