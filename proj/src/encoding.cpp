#include "cardood/encoding.hpp"

#include <algorithm>
#include <cmath>

#include "cardood/error.hpp"

namespace cardood {

std::vector<std::uint64_t> factorize_bitmap(std::span<const int> subset, std::size_t domain_size,
                                            std::size_t chunk_bits) {
  if (chunk_bits == 0 || chunk_bits > 63) throw UsageError("chunk length must lie in [1, 63]");
  const std::size_t chunks = (domain_size + chunk_bits - 1) / chunk_bits;
  std::vector<std::uint64_t> out(chunks, 0);
  for (int v : subset) {
    if (v < 0 || static_cast<std::size_t>(v) >= domain_size) {
      throw DataError("bitmap value " + std::to_string(v) + " outside domain of size " + std::to_string(domain_size));
    }
    const std::size_t k = static_cast<std::size_t>(v);
    const std::size_t bit_in_chunk = k % chunk_bits;
    out[k / chunk_bits] |= std::uint64_t{1} << (chunk_bits - 1 - bit_in_chunk);
  }
  return out;
}

QueryEncoder::QueryEncoder(const Database& db, EncoderOptions options) : db_(&db), options_(options) {
  if (options_.chunk_bits == 0 || options_.chunk_bits > 63) throw UsageError("chunk length must lie in [1, 63]");
  int offset = 0;
  for (const Table& t : db.tables()) {
    table_names_.push_back(t.name);
    for (const AttributeMeta& meta : t.attributes) {
      if (!meta.selectable) continue;
      Slot s;
      s.ref = {t.name, meta.name};
      s.meta = meta;
      s.offset = offset;
      s.attribute_id = attribute_count_++;
      s.ordinal = meta.is_numerical() || meta.range_encodable;
      if (s.ordinal) {
        s.length = 2;
      } else {
        s.length = static_cast<int>((meta.domain_size() + options_.chunk_bits - 1) / options_.chunk_bits);
        literal_width_ = std::max(literal_width_, s.length);
      }
      offset += s.length;
      slots_.push_back(std::move(s));
    }
  }
  join_count_ = db.join_graph().size();
  fixed_width_ = offset + static_cast<int>(join_count_);
}

const QueryEncoder::Slot& QueryEncoder::slot(const AttributeRef& ref) const {
  for (const Slot& s : slots_) {
    if (s.ref == ref) return s;
  }
  throw DataError("attribute " + ref.to_string() + " has no selection encoding in this schema");
}

std::vector<double> QueryEncoder::literal(const Slot& slot, const Selection& s) const {
  const AttributeMeta& meta = slot.meta;
  if (slot.ordinal) {
    double lo = 0.0, hi = 0.0, span = 1.0;
    if (meta.is_numerical()) {
      if (!s.is_range()) throw DataError("IN filter on numerical " + slot.ref.to_string());
      lo = s.range().lb - meta.min;
      hi = s.range().ub - meta.min;
      span = meta.width();
    } else {
      // Ordinal categorical: positions in domain order, IN sets by their hull.
      span = std::max<double>(1.0, static_cast<double>(meta.domain_size()) - 1.0);
      if (s.is_range()) {
        lo = s.range().lb;
        hi = s.range().ub;
      } else {
        lo = s.in().values.front();
        hi = s.in().values.back();
      }
    }
    return {std::clamp(lo / span, 0.0, 1.0), std::clamp(hi / span, 0.0, 1.0)};
  }
  if (s.is_range()) throw DataError("range filter on categorical " + slot.ref.to_string());
  const auto chunks = factorize_bitmap(s.in().values, meta.domain_size(), options_.chunk_bits);
  const double scale = static_cast<double>((std::uint64_t{1} << options_.chunk_bits) - 1);
  std::vector<double> out;
  out.reserve(chunks.size());
  for (std::uint64_t c : chunks) out.push_back(static_cast<double>(c) / scale);
  return out;
}

FixedEncoding QueryEncoder::encode_fixed(const SPJQuery& q) const {
  FixedEncoding enc;
  enc.values = Eigen::VectorXd::Zero(fixed_width_);
  // Absent selections: full range / all-ones bitmap.
  for (const Slot& s : slots_) {
    if (s.ordinal) {
      enc.values[s.offset] = 0.0;
      enc.values[s.offset + 1] = 1.0;
    } else {
      std::vector<int> all(s.meta.domain_size());
      for (std::size_t k = 0; k < all.size(); ++k) all[k] = static_cast<int>(k);
      const auto lit = literal(s, Selection{s.ref, InFilter{all}});
      for (int i = 0; i < s.length; ++i) enc.values[s.offset + i] = lit[static_cast<std::size_t>(i)];
    }
  }
  for (const Selection& sel : q.selections) {
    const Slot& s = slot(sel.attribute);
    const auto lit = literal(s, sel);
    for (int i = 0; i < s.length; ++i) enc.values[s.offset + i] = lit[static_cast<std::size_t>(i)];
    enc.selection_slots.emplace_back(s.offset, s.length);
  }
  const int join_offset = fixed_width_ - static_cast<int>(join_count_);
  for (const JoinPair& j : q.joins) {
    const auto idx = db_->join_index(j);
    if (!idx) throw DataError("join " + j.to_string() + " is not in the join graph");
    enc.values[join_offset + static_cast<int>(*idx)] = 1.0;
  }
  return enc;
}

SetEncoding QueryEncoder::encode_set(const SPJQuery& q) const {
  SetEncoding enc;
  enc.relations = Eigen::MatrixXd::Zero(relation_width(), static_cast<Eigen::Index>(q.relations.size()));
  for (std::size_t i = 0; i < q.relations.size(); ++i) {
    auto it = std::find(table_names_.begin(), table_names_.end(), q.relations[i]);
    if (it == table_names_.end()) throw DataError("unknown relation '" + q.relations[i] + "'");
    enc.relations(it - table_names_.begin(), static_cast<Eigen::Index>(i)) = 1.0;
  }
  enc.selections = Eigen::MatrixXd::Zero(selection_width(), static_cast<Eigen::Index>(q.selections.size()));
  for (std::size_t i = 0; i < q.selections.size(); ++i) {
    const Selection& sel = q.selections[i];
    const Slot& s = slot(sel.attribute);
    const auto col = static_cast<Eigen::Index>(i);
    enc.selections(s.attribute_id, col) = 1.0;
    enc.selections(attribute_count_ + (sel.is_range() ? 0 : 1), col) = 1.0;
    const auto lit = literal(s, sel);
    for (std::size_t k = 0; k < lit.size(); ++k) {
      enc.selections(attribute_count_ + 2 + static_cast<Eigen::Index>(k), col) = lit[k];
    }
  }
  enc.joins = Eigen::MatrixXd::Zero(join_width(), static_cast<Eigen::Index>(q.joins.size()));
  for (std::size_t i = 0; i < q.joins.size(); ++i) {
    const auto idx = db_->join_index(q.joins[i]);
    if (!idx) throw DataError("join " + q.joins[i].to_string() + " is not in the join graph");
    enc.joins(static_cast<Eigen::Index>(*idx), static_cast<Eigen::Index>(i)) = 1.0;
  }
  return enc;
}

FixedEncoding mask_selections(const FixedEncoding& enc, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw UsageError("mask probability must lie in [0, 1]");
  if (p == 0.0) return enc;
  FixedEncoding out = enc;
  std::bernoulli_distribution drop(p);
  for (const auto& [offset, length] : enc.selection_slots) {
    if (drop(rng)) out.values.segment(offset, length).setZero();
  }
  return out;
}

SetEncoding mask_selections(const SetEncoding& enc, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw UsageError("mask probability must lie in [0, 1]");
  if (p == 0.0) return enc;
  SetEncoding out = enc;
  std::bernoulli_distribution drop(p);
  for (Eigen::Index c = 0; c < out.selections.cols(); ++c) {
    if (drop(rng)) out.selections.col(c).setZero();
  }
  return out;
}

FixedEncoding mask_selections(const FixedEncoding& enc, double p, std::uint64_t seed) {
  Rng rng(seed);
  return mask_selections(enc, p, rng);
}

SetEncoding mask_selections(const SetEncoding& enc, double p, std::uint64_t seed) {
  Rng rng(seed);
  return mask_selections(enc, p, rng);
}

}  // namespace cardood
