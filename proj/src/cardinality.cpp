#include <algorithm>
#include <map>
#include <set>
#include <unordered_map>

#include "cardood/error.hpp"
#include "cardood/query.hpp"

namespace cardood {

bool Selection::matches(double value) const {
  if (const auto* r = std::get_if<RangeFilter>(&filter)) return value >= r->lb && value <= r->ub;
  const auto& vals = std::get<InFilter>(filter).values;
  return std::binary_search(vals.begin(), vals.end(), static_cast<int>(value));
}

void SPJQuery::normalize() {
  std::sort(relations.begin(), relations.end());
  relations.erase(std::unique(relations.begin(), relations.end()), relations.end());
  for (Selection& s : selections) {
    if (auto* in = std::get_if<InFilter>(&s.filter)) {
      std::sort(in->values.begin(), in->values.end());
      in->values.erase(std::unique(in->values.begin(), in->values.end()), in->values.end());
    }
  }
  std::stable_sort(selections.begin(), selections.end(),
                   [](const Selection& a, const Selection& b) { return a.attribute < b.attribute; });
  for (JoinPair& j : joins) j = j.canonical();
  std::sort(joins.begin(), joins.end());
  joins.erase(std::unique(joins.begin(), joins.end()), joins.end());
}

bool SPJQuery::has_relation(std::string_view name) const {
  return std::find(relations.begin(), relations.end(), name) != relations.end();
}

void validate_query(const Database& db, const SPJQuery& q) {
  if (q.relations.empty()) throw DataError("query has no relations");
  for (const std::string& r : q.relations) db.table(r);
  std::set<AttributeRef> selected;
  for (const Selection& s : q.selections) {
    if (!q.has_relation(s.attribute.table)) {
      throw DataError("selection on " + s.attribute.to_string() + " outside the query's relations");
    }
    const AttributeMeta& meta = db.attribute(s.attribute);
    if (!selected.insert(s.attribute).second) {
      throw DataError("duplicate selection on " + s.attribute.to_string());
    }
    if (s.is_range()) {
      const RangeFilter& r = s.range();
      if (!(r.lb <= r.ub)) throw DataError("empty range on " + s.attribute.to_string());
    } else {
      const InFilter& in = s.in();
      if (meta.is_numerical()) throw DataError("IN filter on numerical " + s.attribute.to_string());
      if (in.values.empty()) throw DataError("empty IN filter on " + s.attribute.to_string());
      for (int v : in.values) {
        if (v < 0 || static_cast<std::size_t>(v) >= meta.domain_size()) {
          throw DataError("IN value outside domain of " + s.attribute.to_string());
        }
      }
    }
  }
  for (const JoinPair& j : q.joins) {
    if (!db.join_index(j)) throw DataError("join " + j.to_string() + " is not in the join graph");
    if (!q.has_relation(j.left.table) || !q.has_relation(j.right.table)) {
      throw DataError("join " + j.to_string() + " references a relation outside the query");
    }
  }
  // Connectivity over the query's own join conditions.
  std::set<std::string> reached{q.relations.front()};
  bool grew = true;
  while (grew) {
    grew = false;
    for (const JoinPair& j : q.joins) {
      const bool l = reached.count(j.left.table) > 0;
      const bool r = reached.count(j.right.table) > 0;
      if (l != r) {
        reached.insert(l ? j.right.table : j.left.table);
        grew = true;
      }
    }
  }
  if (reached.size() != q.relations.size()) throw DataError("query joins do not connect all relations");
}

namespace {

struct BoundRelation {
  const Table* table = nullptr;
  std::vector<std::uint32_t> rows;  // rows passing the relation's selections
};

// Join condition between the relation at `level` and an earlier-bound one.
struct JoinProbe {
  std::size_t column = 0;        // column in the current relation
  std::size_t other_level = 0;   // level of the bound relation
  std::size_t other_column = 0;  // column in the bound relation
};

struct Level {
  BoundRelation relation;
  std::vector<JoinProbe> probes;
  // Hash index on probes.front().column, over the filtered rows.
  std::unordered_map<double, std::vector<std::uint32_t>> index;
};

std::uint64_t count_from(std::vector<Level>& levels, std::vector<std::uint32_t>& bound, std::size_t depth) {
  if (depth == levels.size()) return 1;
  Level& level = levels[depth];
  const Table& table = *level.relation.table;

  auto consistent = [&](std::uint32_t row) {
    for (std::size_t p = 1; p < level.probes.size(); ++p) {
      const JoinProbe& probe = level.probes[p];
      const Table& other = *levels[probe.other_level].relation.table;
      if (table.at(row, probe.column) != other.at(bound[probe.other_level], probe.other_column)) return false;
    }
    return true;
  };

  std::uint64_t total = 0;
  if (level.probes.empty()) {
    for (std::uint32_t row : level.relation.rows) {
      bound[depth] = row;
      total += count_from(levels, bound, depth + 1);
    }
    return total;
  }
  const JoinProbe& first = level.probes.front();
  const Table& other = *levels[first.other_level].relation.table;
  auto it = level.index.find(other.at(bound[first.other_level], first.other_column));
  if (it == level.index.end()) return 0;
  const bool leaf = depth + 1 == levels.size();
  for (std::uint32_t row : it->second) {
    if (!consistent(row)) continue;
    if (leaf) {
      ++total;
    } else {
      bound[depth] = row;
      total += count_from(levels, bound, depth + 1);
    }
  }
  return total;
}

}  // namespace

std::uint64_t exact_cardinality(const Database& db, const SPJQuery& q) {
  validate_query(db, q);

  // Breadth-first relation order so each relation after the first joins an
  // earlier one.
  std::vector<std::string> order{q.relations.front()};
  while (order.size() < q.relations.size()) {
    for (const JoinPair& j : q.joins) {
      const bool l = std::find(order.begin(), order.end(), j.left.table) != order.end();
      const bool r = std::find(order.begin(), order.end(), j.right.table) != order.end();
      if (l != r) order.push_back(l ? j.right.table : j.left.table);
    }
  }
  std::map<std::string, std::size_t> level_of;
  for (std::size_t i = 0; i < order.size(); ++i) level_of[order[i]] = i;

  std::vector<Level> levels(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Table& table = db.table(order[i]);
    levels[i].relation.table = &table;
    std::vector<std::pair<std::size_t, const Selection*>> filters;
    for (const Selection& s : q.selections) {
      if (s.attribute.table == order[i]) filters.emplace_back(table.attribute_index(s.attribute.attribute), &s);
    }
    for (std::uint32_t row = 0; row < table.num_rows(); ++row) {
      bool keep = true;
      for (const auto& [column, sel] : filters) {
        if (!sel->matches(table.at(row, column))) {
          keep = false;
          break;
        }
      }
      if (keep) levels[i].relation.rows.push_back(row);
    }
    if (levels[i].relation.rows.empty()) return 0;
  }
  for (const JoinPair& j : q.joins) {
    std::size_t a = level_of.at(j.left.table);
    std::size_t b = level_of.at(j.right.table);
    const AttributeRef& ra = j.left;
    const AttributeRef& rb = j.right;
    const bool a_later = a > b;
    const std::size_t later = a_later ? a : b;
    const std::size_t earlier = a_later ? b : a;
    const AttributeRef& later_ref = a_later ? ra : rb;
    const AttributeRef& earlier_ref = a_later ? rb : ra;
    levels[later].probes.push_back({levels[later].relation.table->attribute_index(later_ref.attribute), earlier,
                                    levels[earlier].relation.table->attribute_index(earlier_ref.attribute)});
  }
  for (Level& level : levels) {
    if (level.probes.empty()) continue;
    const std::size_t column = level.probes.front().column;
    for (std::uint32_t row : level.relation.rows) {
      level.index[level.relation.table->at(row, column)].push_back(row);
    }
  }
  std::vector<std::uint32_t> bound(levels.size(), 0);
  return count_from(levels, bound, 0);
}

bool is_subcondition(const SPJQuery& sub, const SPJQuery& q) {
  if (sub.relations != q.relations || sub.joins != q.joins) return false;
  if (sub.selections.size() != q.selections.size()) return false;
  for (std::size_t i = 0; i < q.selections.size(); ++i) {
    const Selection& a = sub.selections[i];
    const Selection& b = q.selections[i];
    if (a.attribute != b.attribute || a.is_range() != b.is_range()) return false;
    if (a.is_range()) {
      if (a.range().lb < b.range().lb || a.range().ub > b.range().ub) return false;
    } else if (!std::includes(b.in().values.begin(), b.in().values.end(), a.in().values.begin(),
                              a.in().values.end())) {
      return false;
    }
  }
  return true;
}

}  // namespace cardood
