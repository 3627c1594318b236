#include "cardood/relational.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cardood/error.hpp"

namespace cardood {

namespace fs = std::filesystem;
using nlohmann::json;

AttributeMeta AttributeMeta::numerical(std::string name, double min, double max) {
  AttributeMeta meta;
  meta.name = std::move(name);
  meta.kind = AttributeKind::Numerical;
  meta.min = min;
  meta.max = max;
  return meta;
}

AttributeMeta AttributeMeta::categorical(std::string name, std::vector<std::string> categories) {
  AttributeMeta meta;
  meta.name = std::move(name);
  meta.kind = AttributeKind::Categorical;
  meta.categories = std::move(categories);
  return meta;
}

void AttributeMeta::validate(std::size_t max_categories) const {
  if (name.empty()) throw DataError("attribute with empty name");
  if (infer_domain) return;
  if (is_numerical()) {
    if (!(min < max)) throw DataError("attribute '" + name + "': numerical domain requires min < max");
    return;
  }
  if (categories.empty()) throw DataError("attribute '" + name + "': empty categorical domain");
  if (categories.size() > max_categories) {
    throw DataError("attribute '" + name + "': categorical domain exceeds " +
                    std::to_string(max_categories) + " values");
  }
  std::set<std::string> seen(categories.begin(), categories.end());
  if (seen.size() != categories.size()) {
    throw DataError("attribute '" + name + "': duplicate categorical values");
  }
}

std::optional<int> AttributeMeta::category_index(std::string_view value) const {
  auto it = std::find(categories.begin(), categories.end(), value);
  if (it == categories.end()) return std::nullopt;
  return static_cast<int>(it - categories.begin());
}

bool AttributeMeta::contains(double value) const {
  if (is_numerical()) return value >= min && value <= max;
  return value >= 0 && value < static_cast<double>(categories.size()) &&
         value == static_cast<double>(static_cast<int>(value));
}

std::size_t Table::attribute_index(std::string_view attribute) const {
  for (std::size_t i = 0; i < attributes.size(); ++i) {
    if (attributes[i].name == attribute) return i;
  }
  throw DataError("unknown attribute '" + std::string(attribute) + "' in table '" + name + "'");
}

const AttributeMeta& Table::attribute(std::string_view attribute) const {
  return attributes[attribute_index(attribute)];
}

void Table::validate(std::size_t max_categories) const {
  if (attributes.empty()) throw DataError("table '" + name + "' has no attributes");
  if (columns.size() != attributes.size()) {
    throw DataError("table '" + name + "': column count does not match schema");
  }
  const std::size_t rows = num_rows();
  for (std::size_t c = 0; c < columns.size(); ++c) {
    attributes[c].validate(max_categories);
    if (columns[c].size() != rows) throw DataError("table '" + name + "': ragged columns");
    for (std::size_t r = 0; r < rows; ++r) {
      if (!attributes[c].contains(columns[c][r])) {
        throw DataError("table '" + name + "': value outside domain at row " + std::to_string(r) +
                        ", column '" + attributes[c].name + "'");
      }
    }
  }
}

AttributeRef AttributeRef::parse(std::string_view text) {
  const auto dot = text.find('.');
  if (dot == std::string_view::npos || dot == 0 || dot + 1 == text.size()) {
    throw DataError("malformed attribute reference '" + std::string(text) + "'");
  }
  return {std::string(text.substr(0, dot)), std::string(text.substr(dot + 1))};
}

JoinPair JoinPair::canonical() const {
  if (right < left) return {right, left};
  return *this;
}

void Database::add_table(Table table) {
  if (has_table(table.name)) throw DataError("duplicate table '" + table.name + "'");
  tables_.push_back(std::move(table));
}

void Database::add_join(const JoinPair& pair) {
  const JoinPair c = pair.canonical();
  const AttributeMeta& a = attribute(c.left);
  const AttributeMeta& b = attribute(c.right);
  if (c.left.table == c.right.table) throw DataError("self-join pair " + c.to_string());
  if (a.kind != b.kind) throw DataError("join pair " + c.to_string() + " joins incompatible kinds");
  if (!a.is_numerical() && a.categories != b.categories) {
    throw DataError("join pair " + c.to_string() + " joins different categorical domains");
  }
  if (join_index(c)) throw DataError("duplicate join pair " + c.to_string());
  joins_.push_back(c);
}

const Table& Database::table(std::string_view name) const { return tables_[table_index(name)]; }

bool Database::has_table(std::string_view name) const {
  return std::any_of(tables_.begin(), tables_.end(), [&](const Table& t) { return t.name == name; });
}

std::size_t Database::table_index(std::string_view name) const {
  for (std::size_t i = 0; i < tables_.size(); ++i) {
    if (tables_[i].name == name) return i;
  }
  throw DataError("unknown relation '" + std::string(name) + "'");
}

const AttributeMeta& Database::attribute(const AttributeRef& ref) const {
  return table(ref.table).attribute(ref.attribute);
}

std::optional<std::size_t> Database::join_index(const JoinPair& pair) const {
  const JoinPair c = pair.canonical();
  auto it = std::find(joins_.begin(), joins_.end(), c);
  if (it == joins_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - joins_.begin());
}

std::vector<std::pair<std::string, std::size_t>> Database::neighbours(std::string_view name) const {
  std::vector<std::pair<std::string, std::size_t>> out;
  for (std::size_t i = 0; i < joins_.size(); ++i) {
    if (joins_[i].left.table == name) out.emplace_back(joins_[i].right.table, i);
    if (joins_[i].right.table == name) out.emplace_back(joins_[i].left.table, i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, end);
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::vector<AttributeMeta> load_schema(const fs::path& path) {
  const json doc = read_json(path);
  const json& list = doc.is_object() ? doc.at("attributes") : doc;
  std::vector<AttributeMeta> schema;
  try {
    for (const json& entry : list) {
      AttributeMeta meta;
      meta.name = entry.at("name").get<std::string>();
      const std::string kind = entry.at("kind").get<std::string>();
      if (kind == "numerical") {
        meta.kind = AttributeKind::Numerical;
      } else if (kind == "categorical") {
        meta.kind = AttributeKind::Categorical;
      } else {
        throw DataError(path.string() + ": unknown kind '" + kind + "'");
      }
      const json& domain = entry.at("domain");
      if (domain.is_string() && domain.get<std::string>() == "infer") {
        meta.infer_domain = true;
      } else if (meta.is_numerical()) {
        meta.min = domain.at(0).get<double>();
        meta.max = domain.at(1).get<double>();
      } else {
        meta.categories = domain.get<std::vector<std::string>>();
      }
      meta.selectable = entry.value("selectable", true);
      meta.range_encodable = entry.value("range_encodable", false);
      meta.validate();
      schema.push_back(std::move(meta));
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return schema;
}

void save_schema(const fs::path& path, const std::vector<AttributeMeta>& schema) {
  json list = json::array();
  for (const AttributeMeta& meta : schema) {
    json entry;
    entry["name"] = meta.name;
    entry["kind"] = meta.is_numerical() ? "numerical" : "categorical";
    if (meta.is_numerical()) {
      entry["domain"] = {meta.min, meta.max};
    } else {
      entry["domain"] = meta.categories;
    }
    if (!meta.selectable) entry["selectable"] = false;
    if (meta.range_encodable) entry["range_encodable"] = true;
    list.push_back(std::move(entry));
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << list.dump(2) << '\n';
}

Table load_table(const fs::path& path, std::vector<AttributeMeta> schema, std::string name) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  Table table;
  table.name = name.empty() ? path.stem().string() : std::move(name);

  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing header row");
  const std::vector<std::string> header = split_csv_line(line);
  if (header.size() != schema.size()) {
    throw DataError(path.string() + ": header has " + std::to_string(header.size()) +
                    " columns, schema declares " + std::to_string(schema.size()));
  }
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] != schema[c].name) {
      throw DataError(path.string() + ": header column " + std::to_string(c) + " is '" + header[c] +
                      "', schema expects '" + schema[c].name + "'");
    }
  }

  // Categorical cells are kept as text until the domain is known.
  std::vector<std::vector<std::string>> raw(schema.size());
  table.columns.assign(schema.size(), {});
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != schema.size()) {
      throw DataError(path.string() + ": row " + std::to_string(row) + " has " +
                      std::to_string(fields.size()) + " fields");
    }
    for (std::size_t c = 0; c < schema.size(); ++c) {
      if (schema[c].is_numerical()) {
        double value = 0.0;
        const std::string& f = fields[c];
        auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), value);
        if (ec != std::errc() || ptr != f.data() + f.size()) {
          throw DataError(path.string() + ": parse failure at row " + std::to_string(row) +
                          ", column '" + schema[c].name + "'");
        }
        table.columns[c].push_back(value);
      } else {
        raw[c].push_back(fields[c]);
      }
    }
    ++row;
  }

  for (std::size_t c = 0; c < schema.size(); ++c) {
    AttributeMeta& meta = schema[c];
    if (meta.is_numerical()) {
      auto& col = table.columns[c];
      if (meta.infer_domain) {
        if (col.empty()) throw DataError(path.string() + ": cannot infer domain from empty column");
        auto [lo, hi] = std::minmax_element(col.begin(), col.end());
        meta.min = *lo;
        meta.max = *hi > *lo ? *hi : *lo + 1.0;
        meta.infer_domain = false;
      }
      for (std::size_t r = 0; r < col.size(); ++r) {
        if (!meta.contains(col[r])) {
          throw DataError(path.string() + ": value outside domain at row " + std::to_string(r) +
                          ", column '" + meta.name + "'");
        }
      }
    } else {
      if (meta.infer_domain) {
        std::set<std::string> distinct(raw[c].begin(), raw[c].end());
        if (distinct.empty()) throw DataError(path.string() + ": cannot infer domain from empty column");
        meta.categories.assign(distinct.begin(), distinct.end());
        meta.infer_domain = false;
      }
      std::map<std::string, int, std::less<>> index;
      for (std::size_t k = 0; k < meta.categories.size(); ++k) index[meta.categories[k]] = int(k);
      auto& col = table.columns[c];
      col.reserve(raw[c].size());
      for (std::size_t r = 0; r < raw[c].size(); ++r) {
        auto it = index.find(raw[c][r]);
        if (it == index.end()) {
          throw DataError(path.string() + ": value outside domain at row " + std::to_string(r) +
                          ", column '" + meta.name + "'");
        }
        col.push_back(it->second);
      }
    }
  }
  table.attributes = std::move(schema);
  table.validate();
  return table;
}

void save_table_csv(const fs::path& path, const Table& table) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t c = 0; c < table.attributes.size(); ++c) {
    out << (c ? "," : "") << csv_escape(table.attributes[c].name);
  }
  out << '\n';
  for (std::size_t r = 0; r < table.num_rows(); ++r) {
    for (std::size_t c = 0; c < table.attributes.size(); ++c) {
      if (c) out << ',';
      const AttributeMeta& meta = table.attributes[c];
      if (meta.is_numerical()) {
        out << format_double(table.columns[c][r]);
      } else {
        out << csv_escape(meta.categories[static_cast<std::size_t>(table.columns[c][r])]);
      }
    }
    out << '\n';
  }
}

Database load_database(const fs::path& manifest) {
  const json doc = read_json(manifest);
  const fs::path base = manifest.parent_path();
  Database db;
  try {
    for (const json& entry : doc.at("tables")) {
      const std::string name = entry.at("name").get<std::string>();
      auto schema = load_schema(base / entry.at("schema").get<std::string>());
      db.add_table(load_table(base / entry.at("csv").get<std::string>(), std::move(schema), name));
    }
    if (doc.contains("joins")) {
      for (const json& j : doc.at("joins")) {
        db.add_join({AttributeRef::parse(j.at("left").get<std::string>()),
                     AttributeRef::parse(j.at("right").get<std::string>())});
      }
    }
  } catch (const json::exception& e) {
    throw DataError(manifest.string() + ": " + e.what());
  }
  return db;
}

void save_database(const fs::path& directory, const Database& db, std::string_view manifest_name) {
  fs::create_directories(directory);
  json doc;
  doc["tables"] = json::array();
  for (const Table& t : db.tables()) {
    const std::string csv = t.name + ".csv";
    const std::string schema = t.name + ".schema.json";
    save_table_csv(directory / csv, t);
    save_schema(directory / schema, t.attributes);
    doc["tables"].push_back({{"name", t.name}, {"csv", csv}, {"schema", schema}});
  }
  doc["joins"] = json::array();
  for (const JoinPair& p : db.join_graph()) {
    doc["joins"].push_back({{"left", p.left.to_string()}, {"right", p.right.to_string()}});
  }
  std::ofstream out(directory / manifest_name);
  if (!out) throw DataError("cannot write manifest in " + directory.string());
  out << doc.dump(2) << '\n';
}

}  // namespace cardood
