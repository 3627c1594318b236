#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "cardood/relational.hpp"

namespace cardood {

/// Closed interval lb <= A <= ub in the attribute's native units.
struct RangeFilter {
  double lb = 0.0;
  double ub = 0.0;
  friend bool operator==(const RangeFilter&, const RangeFilter&) = default;
};

/// A IN C; `values` are sorted, distinct indices into the categorical domain.
struct InFilter {
  std::vector<int> values;
  friend bool operator==(const InFilter&, const InFilter&) = default;
};

struct Selection {
  AttributeRef attribute;
  std::variant<RangeFilter, InFilter> filter;

  bool is_range() const { return std::holds_alternative<RangeFilter>(filter); }
  const RangeFilter& range() const { return std::get<RangeFilter>(filter); }
  const InFilter& in() const { return std::get<InFilter>(filter); }
  /// Whether a single cell value satisfies the predicate.
  bool matches(double value) const;

  friend bool operator==(const Selection&, const Selection&) = default;
};

/// Conjunctive select-project-join query plus its optional label.
///
/// Equality is structural: relations, selections and joins after
/// normalisation. The label and template tag do not take part.
struct SPJQuery {
  std::vector<std::string> relations;
  std::vector<Selection> selections;
  std::vector<JoinPair> joins;
  std::optional<std::uint64_t> cardinality;
  std::string template_tag;

  /// Sorts relations and selections by name, joins canonically.
  void normalize();
  std::size_t num_selections() const { return selections.size(); }
  std::size_t num_joins() const { return joins.size(); }
  bool has_relation(std::string_view name) const;

  friend bool operator==(const SPJQuery& a, const SPJQuery& b) {
    return a.relations == b.relations && a.selections == b.selections && a.joins == b.joins;
  }
};

/// Throws DataError unless every relation, attribute and join of `q` exists
/// in `db`, joins belong to the join graph, and the joins connect all
/// relations into one component.
void validate_query(const Database& db, const SPJQuery& q);

/// Exact result count of `q` over `db` by index nested-loop enumeration with
/// per-relation selection pre-filtering. May return 0.
std::uint64_t exact_cardinality(const Database& db, const SPJQuery& q);

/// True iff both queries share relations, joins and selected attributes and
/// every selection of `sub` is contained in the matching selection of `q`.
bool is_subcondition(const SPJQuery& sub, const SPJQuery& q);

using Rng = std::mt19937_64;

/// Data-centric single-table query with `d` selections on distinct
/// selectable attributes. All ranges are centred on one sampled row, so the
/// query is never empty.
SPJQuery generate_single_table_query(const Table& table, std::size_t d, std::uint64_t seed);
SPJQuery generate_single_table_query(const Table& table, std::size_t d, Rng& rng);

struct JoinQueryOptions {
  /// Selections per relation are uniform in [min, max], capped at the number
  /// of selectable attributes.
  std::size_t min_selections_per_relation = 1;
  std::size_t max_selections_per_relation = 2;
};

/// Random walk of `t` join steps from a uniformly drawn start relation, with
/// independently drawn selections per relation.
SPJQuery generate_join_query(const Database& db, std::size_t t, std::uint64_t seed,
                             const JoinQueryOptions& options = {});
SPJQuery generate_join_query(const Database& db, std::size_t t, Rng& rng,
                             const JoinQueryOptions& options = {});

/// `k` strictly-tightened variants of `q`; each satisfies is_subcondition(q', q).
std::vector<SPJQuery> sample_contrastive_queries(const SPJQuery& q, std::size_t k, std::uint64_t seed);
std::vector<SPJQuery> sample_contrastive_queries(const SPJQuery& q, std::size_t k, Rng& rng);

}  // namespace cardood
