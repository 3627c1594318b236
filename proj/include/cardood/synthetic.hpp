#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cardood/relational.hpp"

namespace cardood {

/// B <- coef * A + (1 - coef) * B on the normalised [0, 1] scale.
struct Correlation {
  std::string a;
  std::string b;
  double coef = 0.0;
};

struct SyntheticTableSpec {
  std::string name = "t0";
  std::size_t rows = 1000;
  std::vector<AttributeMeta> attributes;
  std::vector<Correlation> correlation;
  /// Exponent of the Zipf-like skew used for categorical values and cluster
  /// masses of numerical values.
  double skew = 1.2;
};

/// Deterministic under `seed`. Numerical columns are clustered mixtures
/// clipped to the domain; categorical columns follow a shuffled Zipf law.
Table generate_synthetic_table(const SyntheticTableSpec& spec, std::uint64_t seed);

/// `from` gets a foreign-key column referencing the key column of `to`.
struct ForeignKey {
  std::string from;
  std::string to;
};

struct SyntheticDatabaseSpec {
  std::vector<SyntheticTableSpec> tables;
  std::vector<ForeignKey> foreign_keys;
};

/// Generates every table, adds a non-selectable `id` key column to each
/// referenced table and a skewed `<to>_id` column to each referencing one,
/// and registers the pairs in the join graph.
Database generate_synthetic_database(const SyntheticDatabaseSpec& spec, std::uint64_t seed);

}  // namespace cardood
