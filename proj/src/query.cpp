#include <algorithm>
#include <numeric>

#include "cardood/error.hpp"
#include "cardood/query.hpp"

namespace cardood {

namespace {

std::vector<std::size_t> selectable_columns(const Table& table) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < table.attributes.size(); ++c) {
    if (table.attributes[c].selectable) out.push_back(c);
  }
  return out;
}

// Range of width uniform over (0, domain width] centred on `centre`, clipped
// to the domain.
RangeFilter centred_range(const AttributeMeta& meta, double centre, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, meta.width());
  const double w = meta.width() - u(rng);
  return {std::max(meta.min, centre - w / 2), std::min(meta.max, centre + w / 2)};
}

InFilter in_filter_with(const AttributeMeta& meta, int must_have, Rng& rng) {
  const int m = static_cast<int>(meta.domain_size());
  std::uniform_int_distribution<int> size_dist(1, m);
  const int size = size_dist(rng);
  std::vector<int> others;
  for (int v = 0; v < m; ++v) {
    if (v != must_have) others.push_back(v);
  }
  std::shuffle(others.begin(), others.end(), rng);
  InFilter f;
  f.values.push_back(must_have);
  f.values.insert(f.values.end(), others.begin(), others.begin() + (size - 1));
  std::sort(f.values.begin(), f.values.end());
  return f;
}

// `d` selections on distinct selectable attributes, all centred on one row.
std::vector<Selection> data_centric_selections(const Table& table, std::size_t d, Rng& rng) {
  std::vector<std::size_t> columns = selectable_columns(table);
  std::shuffle(columns.begin(), columns.end(), rng);
  columns.resize(d);
  std::uniform_int_distribution<std::size_t> row_dist(0, table.num_rows() - 1);
  const std::size_t row = row_dist(rng);
  std::vector<Selection> out;
  for (std::size_t c : columns) {
    const AttributeMeta& meta = table.attributes[c];
    Selection s{{table.name, meta.name}, RangeFilter{}};
    if (meta.is_numerical()) {
      s.filter = centred_range(meta, table.at(row, c), rng);
    } else {
      s.filter = in_filter_with(meta, static_cast<int>(table.at(row, c)), rng);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

SPJQuery generate_single_table_query(const Table& table, std::size_t d, Rng& rng) {
  const std::size_t available = selectable_columns(table).size();
  if (d < 2 || d > available) {
    throw DataError("selection count " + std::to_string(d) + " outside [2, " + std::to_string(available) +
                    "] for table '" + table.name + "'");
  }
  if (table.num_rows() == 0) throw DataError("table '" + table.name + "' is empty");
  SPJQuery q;
  q.relations = {table.name};
  q.selections = data_centric_selections(table, d, rng);
  q.normalize();
  return q;
}

SPJQuery generate_single_table_query(const Table& table, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  return generate_single_table_query(table, d, rng);
}

SPJQuery generate_join_query(const Database& db, std::size_t t, Rng& rng, const JoinQueryOptions& options) {
  const auto& tables = db.tables();
  if (tables.empty()) throw DataError("database has no tables");
  if (t + 1 > tables.size()) {
    throw DataError("join count " + std::to_string(t) + " exceeds |tables| - 1 = " +
                    std::to_string(tables.size() - 1));
  }
  if (options.min_selections_per_relation > options.max_selections_per_relation) {
    throw UsageError("min selections per relation exceeds max");
  }
  std::uniform_int_distribution<std::size_t> start_dist(0, tables.size() - 1);
  SPJQuery q;
  q.relations.push_back(tables[start_dist(rng)].name);
  for (std::size_t step = 0; step < t; ++step) {
    std::vector<std::size_t> frontier;
    for (std::size_t i = 0; i < db.join_graph().size(); ++i) {
      const JoinPair& p = db.join_graph()[i];
      if (q.has_relation(p.left.table) != q.has_relation(p.right.table)) frontier.push_back(i);
    }
    if (frontier.empty()) {
      throw DataError("join graph does not allow a " + std::to_string(t) + "-step walk from '" +
                      q.relations.front() + "'");
    }
    std::uniform_int_distribution<std::size_t> pick(0, frontier.size() - 1);
    const JoinPair& p = db.join_graph()[frontier[pick(rng)]];
    q.joins.push_back(p);
    q.relations.push_back(q.has_relation(p.left.table) ? p.right.table : p.left.table);
  }
  for (const std::string& name : q.relations) {
    const Table& table = db.table(name);
    const std::size_t available = selectable_columns(table).size();
    const std::size_t lo = std::min(options.min_selections_per_relation, available);
    const std::size_t hi = std::min(options.max_selections_per_relation, available);
    std::uniform_int_distribution<std::size_t> count(lo, hi);
    const std::size_t d = count(rng);
    if (d == 0 || table.num_rows() == 0) continue;
    auto sels = data_centric_selections(table, d, rng);
    q.selections.insert(q.selections.end(), sels.begin(), sels.end());
  }
  q.normalize();
  return q;
}

SPJQuery generate_join_query(const Database& db, std::size_t t, std::uint64_t seed,
                             const JoinQueryOptions& options) {
  Rng rng(seed);
  return generate_join_query(db, t, rng, options);
}

std::vector<SPJQuery> sample_contrastive_queries(const SPJQuery& q, std::size_t k, Rng& rng) {
  if (q.selections.empty()) throw DataError("contrastive sampling needs a query with selections");
  if (k == 0) throw UsageError("contrastive sample count must be at least 1");
  const std::size_t n = q.selections.size();
  std::bernoulli_distribution coin(0.5);
  std::vector<SPJQuery> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    SPJQuery sub = q;
    sub.cardinality.reset();
    // Uniform over non-empty subsets of the selections.
    std::vector<bool> chosen(n);
    do {
      for (std::size_t s = 0; s < n; ++s) chosen[s] = coin(rng);
    } while (std::none_of(chosen.begin(), chosen.end(), [](bool b) { return b; }));

    for (std::size_t s = 0; s < n; ++s) {
      if (!chosen[s]) continue;
      Selection& sel = sub.selections[s];
      if (auto* r = std::get_if<RangeFilter>(&sel.filter)) {
        std::uniform_real_distribution<double> mid(r->lb, r->ub);
        const double v = r->lb < r->ub ? std::clamp(mid(rng), r->lb, r->ub) : r->lb;
        if (coin(rng)) {
          r->ub = v;
        } else {
          r->lb = v;
        }
      } else {
        auto& values = std::get<InFilter>(sel.filter).values;
        if (values.size() < 2) continue;
        std::uniform_int_distribution<std::size_t> drop_count(1, values.size() - 1);
        const std::size_t drop = drop_count(rng);
        std::shuffle(values.begin(), values.end(), rng);
        values.resize(values.size() - drop);
        std::sort(values.begin(), values.end());
      }
    }
    out.push_back(std::move(sub));
  }
  return out;
}

std::vector<SPJQuery> sample_contrastive_queries(const SPJQuery& q, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  return sample_contrastive_queries(q, k, rng);
}

}  // namespace cardood
