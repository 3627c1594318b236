#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cardood/query.hpp"

namespace cardood {

/// Fixed-width vector: per-attribute selection slots in schema order followed
/// by one bit per join pair. `selection_slots` lists the [offset, length)
/// spans owned by the query's present selections.
struct FixedEncoding {
  Eigen::VectorXd values;
  std::vector<std::pair<int, int>> selection_slots;

  Eigen::Index width() const { return values.size(); }
};

/// Three member sets, one column per member.
struct SetEncoding {
  Eigen::MatrixXd relations;
  Eigen::MatrixXd selections;
  Eigen::MatrixXd joins;
};

/// Lossless factorised bitmap of `subset` (sorted domain indices) over a
/// domain of `domain_size` values in chunks of `chunk_bits`: bit k is set iff
/// value k is present, most-significant-first within a chunk, the tail chunk
/// zero-padded on the right. Throws DataError for out-of-domain values.
std::vector<std::uint64_t> factorize_bitmap(std::span<const int> subset, std::size_t domain_size,
                                            std::size_t chunk_bits);

struct EncoderOptions {
  std::size_t chunk_bits = 8;
};

/// Schema-bound encoder: computes slot layouts once per database.
class QueryEncoder {
 public:
  explicit QueryEncoder(const Database& db, EncoderOptions options = {});

  FixedEncoding encode_fixed(const SPJQuery& q) const;
  SetEncoding encode_set(const SPJQuery& q) const;

  int fixed_width() const { return fixed_width_; }
  int relation_width() const { return static_cast<int>(table_names_.size()); }
  int selection_width() const { return attribute_count_ + 2 + literal_width_; }
  int join_width() const { return static_cast<int>(join_count_); }
  const EncoderOptions& options() const { return options_; }

 private:
  struct Slot {
    AttributeRef ref;
    AttributeMeta meta;
    int offset = 0;
    int length = 0;
    int attribute_id = 0;
    bool ordinal = false;  // numerical or range-encodable categorical
  };
  const Slot& slot(const AttributeRef& ref) const;
  /// Selection literal as normalised values: two range bounds or the
  /// factorised bitmap chunks scaled into [0, 1].
  std::vector<double> literal(const Slot& slot, const Selection& s) const;

  const Database* db_;
  EncoderOptions options_;
  std::vector<std::string> table_names_;
  std::vector<Slot> slots_;
  int attribute_count_ = 0;
  int literal_width_ = 2;
  std::size_t join_count_ = 0;
  int fixed_width_ = 0;
};

/// Query Masking: each selection is dropped independently with probability
/// `p`, its feature slots (or member vector) set to zero. Relation and join
/// features are untouched. `p == 0` returns the input unchanged.
FixedEncoding mask_selections(const FixedEncoding& enc, double p, std::uint64_t seed);
SetEncoding mask_selections(const SetEncoding& enc, double p, std::uint64_t seed);
FixedEncoding mask_selections(const FixedEncoding& enc, double p, Rng& rng);
SetEncoding mask_selections(const SetEncoding& enc, double p, Rng& rng);

}  // namespace cardood
