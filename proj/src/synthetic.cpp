#include "cardood/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cardood/error.hpp"
#include "cardood/seed.hpp"

namespace cardood {

namespace {

std::vector<double> zipf_weights(std::size_t n, double exponent) {
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) w[k] = 1.0 / std::pow(static_cast<double>(k + 1), exponent);
  return w;
}

// Values in [0, 1] from a mixture of clipped Gaussians with Zipf-distributed
// cluster masses.
std::vector<double> clustered_column(std::size_t rows, double skew, std::mt19937_64& rng) {
  constexpr std::size_t kClusters = 6;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> spread(0.01, 0.15);
  std::vector<double> centres(kClusters), spreads(kClusters);
  for (std::size_t k = 0; k < kClusters; ++k) {
    centres[k] = unit(rng);
    spreads[k] = spread(rng);
  }
  const auto weights = zipf_weights(kClusters, skew);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(rows);
  for (double& v : out) {
    const std::size_t k = pick(rng);
    v = std::clamp(centres[k] + spreads[k] * normal(rng), 0.0, 1.0);
  }
  return out;
}

std::vector<double> zipf_column(std::size_t rows, std::size_t domain, double skew, std::mt19937_64& rng) {
  std::vector<std::size_t> rank_to_value(domain);
  std::iota(rank_to_value.begin(), rank_to_value.end(), 0);
  std::shuffle(rank_to_value.begin(), rank_to_value.end(), rng);
  const auto weights = zipf_weights(domain, skew);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::vector<double> out(rows);
  for (double& v : out) v = static_cast<double>(rank_to_value[pick(rng)]);
  return out;
}

}  // namespace

Table generate_synthetic_table(const SyntheticTableSpec& spec, std::uint64_t seed) {
  if (spec.attributes.empty()) throw DataError("synthetic table '" + spec.name + "' has no attributes");
  if (spec.rows == 0) throw DataError("synthetic table '" + spec.name + "' needs at least one row");

  Table table;
  table.name = spec.name;
  table.attributes = spec.attributes;
  for (AttributeMeta& meta : table.attributes) {
    if (meta.infer_domain) throw DataError("synthetic attribute '" + meta.name + "' needs a declared domain");
    meta.validate();
  }

  std::mt19937_64 rng(derive_seed(seed, "table:" + spec.name));
  // Normalised numerical values first so correlations act on [0, 1].
  std::vector<std::vector<double>> unit(table.attributes.size());
  table.columns.resize(table.attributes.size());
  for (std::size_t c = 0; c < table.attributes.size(); ++c) {
    const AttributeMeta& meta = table.attributes[c];
    if (meta.is_numerical()) {
      unit[c] = clustered_column(spec.rows, spec.skew, rng);
    } else {
      table.columns[c] = zipf_column(spec.rows, meta.domain_size(), spec.skew, rng);
    }
  }
  for (const Correlation& corr : spec.correlation) {
    if (!(corr.coef >= 0.0 && corr.coef <= 1.0)) {
      throw DataError("correlation coefficient for " + corr.a + "," + corr.b + " outside [0, 1]");
    }
    const std::size_t a = table.attribute_index(corr.a);
    const std::size_t b = table.attribute_index(corr.b);
    if (a == b || !table.attributes[a].is_numerical() || !table.attributes[b].is_numerical()) {
      throw DataError("correlation requires two distinct numerical attributes");
    }
    for (std::size_t r = 0; r < spec.rows; ++r) {
      unit[b][r] = corr.coef * unit[a][r] + (1.0 - corr.coef) * unit[b][r];
    }
  }
  for (std::size_t c = 0; c < table.attributes.size(); ++c) {
    const AttributeMeta& meta = table.attributes[c];
    if (!meta.is_numerical()) continue;
    table.columns[c].resize(spec.rows);
    for (std::size_t r = 0; r < spec.rows; ++r) {
      table.columns[c][r] = std::clamp(meta.min + unit[c][r] * meta.width(), meta.min, meta.max);
    }
  }
  return table;
}

Database generate_synthetic_database(const SyntheticDatabaseSpec& spec, std::uint64_t seed) {
  if (spec.tables.empty()) throw DataError("synthetic database has no tables");
  std::vector<Table> tables;
  for (const SyntheticTableSpec& ts : spec.tables) tables.push_back(generate_synthetic_table(ts, seed));

  auto find = [&](const std::string& name) -> Table& {
    for (Table& t : tables) {
      if (t.name == name) return t;
    }
    throw DataError("foreign key references unknown table '" + name + "'");
  };

  std::mt19937_64 rng(derive_seed(seed, "foreign-keys"));
  std::vector<JoinPair> pairs;
  for (const ForeignKey& fk : spec.foreign_keys) {
    Table& to = find(fk.to);
    Table& from = find(fk.from);
    if (&to == &from) throw DataError("self-referencing foreign key on '" + fk.to + "'");
    const std::size_t n = to.num_rows();
    const double max_id = n > 1 ? static_cast<double>(n - 1) : 1.0;
    if (std::none_of(to.attributes.begin(), to.attributes.end(),
                     [](const AttributeMeta& m) { return m.name == "id"; })) {
      AttributeMeta id = AttributeMeta::numerical("id", 0.0, max_id);
      id.selectable = false;
      std::vector<double> ids(n);
      std::iota(ids.begin(), ids.end(), 0.0);
      to.attributes.push_back(std::move(id));
      to.columns.push_back(std::move(ids));
    }
    AttributeMeta key = AttributeMeta::numerical(fk.to + "_id", 0.0, max_id);
    key.selectable = false;
    if (std::any_of(from.attributes.begin(), from.attributes.end(),
                    [&](const AttributeMeta& m) { return m.name == key.name; })) {
      throw DataError("duplicate foreign key " + fk.from + " -> " + fk.to);
    }
    from.columns.push_back(zipf_column(from.num_rows(), n, 1.0, rng));
    from.attributes.push_back(std::move(key));
    pairs.push_back({{fk.from, fk.to + "_id"}, {fk.to, "id"}});
  }

  Database db;
  for (Table& t : tables) db.add_table(std::move(t));
  for (const JoinPair& p : pairs) db.add_join(p);
  return db;
}

}  // namespace cardood
