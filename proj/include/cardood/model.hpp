#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cardood/encoding.hpp"
#include "cardood/error.hpp"
#include "cardood/nn.hpp"
#include "cardood/seed.hpp"

namespace cardood {

enum class Arch { Mlp, Mscn };

inline std::string to_string(Arch arch) { return arch == Arch::Mlp ? "mlp" : "mscn"; }
inline Arch parse_arch(std::string_view text) {
  if (text == "mlp") return Arch::Mlp;
  if (text == "mscn") return Arch::Mscn;
  throw UsageError("unknown architecture '" + std::string(text) + "'");
}

/// Layer widths. Input widths come from the encoder; the rest default to 64
/// for set convolutions and the embedding, 128 for MLP hidden layers.
struct ModelDims {
  int input_width = 0;
  int relation_width = 0;
  int selection_width = 0;
  int join_width = 0;
  int set_hidden = 64;
  int mlp_hidden = 128;
  int embedding = 64;
  int groups = 0;  // discriminator classes, 0 = no discriminator
  int discriminator_hidden = 64;

  static ModelDims for_encoder(const QueryEncoder& encoder) {
    ModelDims d;
    d.input_width = encoder.fixed_width();
    d.relation_width = encoder.relation_width();
    d.selection_width = encoder.selection_width();
    d.join_width = encoder.join_width();
    return d;
  }
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Model input for one mini-batch, one query per column (MLP) or one member
/// per column with per-query offsets (MSCN).
template <typename Scalar>
struct Batch {
  Eigen::Index size = 0;
  Matrix<Scalar> features;
  Matrix<Scalar> relations, selections, joins;
  std::vector<Eigen::Index> relation_offsets, selection_offsets, join_offsets;
};

template <typename Scalar>
Batch<Scalar> make_batch(std::span<const FixedEncoding* const> encodings) {
  Batch<Scalar> b;
  b.size = static_cast<Eigen::Index>(encodings.size());
  if (encodings.empty()) return b;
  b.features.resize(encodings.front()->width(), b.size);
  for (Eigen::Index i = 0; i < b.size; ++i) {
    if (encodings[i]->width() != b.features.rows()) throw DataError("fixed encodings of different widths in one batch");
    b.features.col(i) = encodings[i]->values.template cast<Scalar>();
  }
  return b;
}

namespace detail {

// Members are appended in lexicographic column order so pooled sums do not
// depend on the order of members in the encoding.
template <typename Scalar>
void append_sorted_members(const Eigen::MatrixXd& set, std::vector<Eigen::VectorXd>& members) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(set.cols()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    const auto ca = set.col(a);
    const auto cb = set.col(b);
    return std::lexicographical_compare(ca.begin(), ca.end(), cb.begin(), cb.end());
  });
  for (Eigen::Index c : order) members.emplace_back(set.col(c));
}

template <typename Scalar>
Matrix<Scalar> stack_members(const std::vector<Eigen::VectorXd>& members, Eigen::Index rows) {
  Matrix<Scalar> out(rows, static_cast<Eigen::Index>(members.size()));
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (members[i].size() != rows) throw DataError("set member width mismatch");
    out.col(static_cast<Eigen::Index>(i)) = members[i].template cast<Scalar>();
  }
  return out;
}

}  // namespace detail

template <typename Scalar>
Batch<Scalar> make_batch(std::span<const SetEncoding* const> encodings) {
  Batch<Scalar> b;
  b.size = static_cast<Eigen::Index>(encodings.size());
  if (encodings.empty()) return b;
  std::vector<Eigen::VectorXd> rel, sel, join;
  b.relation_offsets = {0};
  b.selection_offsets = {0};
  b.join_offsets = {0};
  for (const SetEncoding* e : encodings) {
    detail::append_sorted_members<Scalar>(e->relations, rel);
    detail::append_sorted_members<Scalar>(e->selections, sel);
    detail::append_sorted_members<Scalar>(e->joins, join);
    b.relation_offsets.push_back(static_cast<Eigen::Index>(rel.size()));
    b.selection_offsets.push_back(static_cast<Eigen::Index>(sel.size()));
    b.join_offsets.push_back(static_cast<Eigen::Index>(join.size()));
  }
  const SetEncoding& first = *encodings.front();
  b.relations = detail::stack_members<Scalar>(rel, first.relations.rows());
  b.selections = detail::stack_members<Scalar>(sel, first.selections.rows());
  b.joins = detail::stack_members<Scalar>(join, first.joins.rows());
  return b;
}

/// Column-wise softmax.
template <typename Scalar>
Matrix<Scalar> softmax(const Matrix<Scalar>& logits) {
  Matrix<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const Scalar peak = logits.col(c).maxCoeff();
    out.col(c) = (logits.col(c).array() - peak).exp().matrix();
    out.col(c) /= out.col(c).sum();
  }
  return out;
}

/// Cardinality estimator c = g o h with an optional group discriminator y.
///
/// h (extractor): MLP arch, the fixed encoding through two rectified hidden
/// layers into the embedding; MSCN arch, per-set shared MLPs, average
/// pooling, concatenation, then a rectified MLP into the embedding. Everything
/// up to the last hidden layer belongs to h. g (predictor) is one affine head
/// producing the natural-log cardinality. y is a one-hidden-layer softmax
/// classifier over the embedding.
template <typename Scalar>
class Model {
 public:
  struct PoolPass {
    Matrix<Scalar> pooled;
    typename Mlp<Scalar>::Cache relation_cache, selection_cache, join_cache;
  };
  struct ForwardPass {
    PoolPass pool;
    typename Mlp<Scalar>::Cache extractor_cache;
    Matrix<Scalar> embedding;  // d x n
    Matrix<Scalar> log_card;   // 1 x n
    typename Mlp<Scalar>::Cache discriminator_cache;
    Matrix<Scalar> group_logits;  // m x n, empty without discriminator
    Matrix<Scalar> group_probs;
  };

  Model() = default;
  Model(Arch arch, const ModelDims& dims, std::uint64_t seed) : arch_(arch), dims_(dims), seed_(seed) {
    if (dims.embedding <= 0 || dims.mlp_hidden <= 0 || dims.set_hidden <= 0 || dims.groups < 0 ||
        dims.discriminator_hidden <= 0) {
      throw UsageError("model dimensions must be positive");
    }
    std::mt19937_64 rng(derive_seed(seed, "model-init"));
    if (arch == Arch::Mlp) {
      if (dims.input_width <= 0) throw UsageError("MLP input width must be positive");
      extractor_ = Mlp<Scalar>({dims.input_width, dims.mlp_hidden, dims.mlp_hidden, dims.embedding}, true, rng);
    } else {
      if (dims.relation_width <= 0 || dims.selection_width <= 0 || dims.join_width < 0) {
        throw UsageError("MSCN set widths must be positive");
      }
      relation_conv_ = Mlp<Scalar>({dims.relation_width, dims.set_hidden, dims.set_hidden}, true, rng);
      selection_conv_ = Mlp<Scalar>({dims.selection_width, dims.set_hidden, dims.set_hidden}, true, rng);
      // A schema without join pairs still gets a (never-fed) join convolution.
      join_conv_ = Mlp<Scalar>({std::max(dims.join_width, 1), dims.set_hidden, dims.set_hidden}, true, rng);
      extractor_ = Mlp<Scalar>({3 * dims.set_hidden, dims.mlp_hidden, dims.embedding}, true, rng);
    }
    head_ = Dense<Scalar>(dims.embedding, 1, rng);
    if (dims.groups > 0) enable_discriminator(dims.groups);
  }

  Arch arch() const { return arch_; }
  const ModelDims& dims() const { return dims_; }
  std::uint64_t seed() const { return seed_; }
  bool has_discriminator() const { return !discriminator_.empty(); }

  /// Fresh m-way discriminator, seeded from the model seed.
  void enable_discriminator(int groups) {
    if (groups <= 0) throw UsageError("discriminator needs at least one group");
    std::mt19937_64 rng(derive_seed(seed_, "discriminator-init"));
    dims_.groups = groups;
    discriminator_ = Mlp<Scalar>({dims_.embedding, dims_.discriminator_hidden, groups}, false, rng);
  }

  /// Stage one: the extractor input. For MLP this is the encoding itself,
  /// for MSCN the concatenated per-set averages.
  PoolPass pool(const Batch<Scalar>& batch) const {
    PoolPass p;
    if (arch_ == Arch::Mlp) {
      if (batch.features.rows() != dims_.input_width) throw DataError("encoding width does not match the model");
      p.pooled = batch.features;
      return p;
    }
    if (batch.relation_offsets.size() != static_cast<std::size_t>(batch.size + 1)) {
      throw DataError("MLP encoding fed to an MSCN model");
    }
    const int h = dims_.set_hidden;
    p.pooled = Matrix<Scalar>::Zero(3 * h, batch.size);
    pool_set(relation_conv_, batch.relations, batch.relation_offsets, dims_.relation_width, p.relation_cache,
             p.pooled.middleRows(0, h));
    pool_set(selection_conv_, batch.selections, batch.selection_offsets, dims_.selection_width, p.selection_cache,
             p.pooled.middleRows(h, h));
    pool_set(join_conv_, batch.joins, batch.join_offsets, dims_.join_width, p.join_cache, p.pooled.middleRows(2 * h, h));
    return p;
  }

  /// Stage two: embedding, log-cardinality and group probabilities.
  ForwardPass forward_pooled(Matrix<Scalar> pooled) const {
    ForwardPass f;
    f.embedding = extractor_.forward(pooled, &f.extractor_cache);
    f.pool.pooled = std::move(pooled);
    f.log_card = head_.forward(f.embedding);
    if (has_discriminator()) {
      f.group_logits = discriminator_.forward(f.embedding, &f.discriminator_cache);
      f.group_probs = softmax<Scalar>(f.group_logits);
    }
    return f;
  }

  ForwardPass forward(const Batch<Scalar>& batch) const {
    PoolPass p = pool(batch);
    Matrix<Scalar> pooled = p.pooled;
    ForwardPass f = forward_pooled(std::move(pooled));
    p.pooled = std::move(f.pool.pooled);
    f.pool = std::move(p);
    return f;
  }

  /// Accumulates predictor gradients; returns dL/d(embedding).
  Matrix<Scalar> backward_head(const ForwardPass& f, const Matrix<Scalar>& d_log_card) {
    return head_.backward(f.embedding, d_log_card);
  }

  /// Accumulates discriminator gradients from dL/d(logits); returns
  /// dL/d(embedding).
  Matrix<Scalar> backward_discriminator(const ForwardPass& f, const Matrix<Scalar>& d_logits) {
    return discriminator_.backward(f.discriminator_cache, d_logits);
  }

  /// Accumulates extractor MLP gradients; returns dL/d(pooled).
  Matrix<Scalar> backward_extractor(const ForwardPass& f, const Matrix<Scalar>& d_embedding) {
    return extractor_.backward(f.extractor_cache, d_embedding);
  }

  /// Accumulates set-convolution gradients (MSCN only).
  void backward_pool(const Batch<Scalar>& batch, const PoolPass& p, const Matrix<Scalar>& d_pooled) {
    if (arch_ == Arch::Mlp) return;
    const int h = dims_.set_hidden;
    unpool_set(relation_conv_, batch.relation_offsets, p.relation_cache, d_pooled.middleRows(0, h));
    unpool_set(selection_conv_, batch.selection_offsets, p.selection_cache, d_pooled.middleRows(h, h));
    unpool_set(join_conv_, batch.join_offsets, p.join_cache, d_pooled.middleRows(2 * h, h));
  }

  /// Full backward pass of dL/d(log_card) plus an optional extra
  /// dL/d(embedding) term from a regulariser.
  void backward(const Batch<Scalar>& batch, const ForwardPass& f, const Matrix<Scalar>& d_log_card,
                const Matrix<Scalar>* d_embedding_extra = nullptr) {
    Matrix<Scalar> d_emb = backward_head(f, d_log_card);
    if (d_embedding_extra) d_emb += *d_embedding_extra;
    backward_pool(batch, f.pool, backward_extractor(f, d_emb));
  }

  void zero_grad() {
    visit_extractor([](Matrix<Scalar>&, Matrix<Scalar>& g) { g.setZero(); });
    visit_predictor([](Matrix<Scalar>&, Matrix<Scalar>& g) { g.setZero(); });
    visit_discriminator([](Matrix<Scalar>&, Matrix<Scalar>& g) { g.setZero(); });
  }

  /// Parameter partitions, each visited as (param, grad) in a fixed order.
  template <typename F>
  void visit_extractor(F&& f) {
    visit_parts(f, relation_conv_, selection_conv_, join_conv_, extractor_);
  }
  template <typename F>
  void visit_extractor(F&& f) const {
    visit_parts(f, relation_conv_, selection_conv_, join_conv_, extractor_);
  }
  template <typename F>
  void visit_predictor(F&& f) {
    head_.visit(f);
  }
  template <typename F>
  void visit_predictor(F&& f) const {
    head_.visit(f);
  }
  template <typename F>
  void visit_discriminator(F&& f) {
    discriminator_.visit(f);
  }
  template <typename F>
  void visit_discriminator(F&& f) const {
    discriminator_.visit(f);
  }
  template <typename F>
  void visit_all(F&& f) {
    visit_extractor(f);
    visit_predictor(f);
    visit_discriminator(f);
  }
  template <typename F>
  void visit_all(F&& f) const {
    visit_extractor(f);
    visit_predictor(f);
    visit_discriminator(f);
  }

  /// All parameters concatenated in visit order.
  Vector<Scalar> flat_parameters() const {
    std::vector<Scalar> values;
    visit_all([&](const Matrix<Scalar>& p, const Matrix<Scalar>&) {
      values.insert(values.end(), p.data(), p.data() + p.size());
    });
    return Eigen::Map<Vector<Scalar>>(values.data(), static_cast<Eigen::Index>(values.size()));
  }

  template <typename Other>
  Model<Other> cast() const {
    Model<Other> out;
    out.arch_ = arch_;
    out.dims_ = dims_;
    out.seed_ = seed_;
    out.relation_conv_ = cast_mlp<Other>(relation_conv_);
    out.selection_conv_ = cast_mlp<Other>(selection_conv_);
    out.join_conv_ = cast_mlp<Other>(join_conv_);
    out.extractor_ = cast_mlp<Other>(extractor_);
    out.head_ = cast_dense<Other>(head_);
    out.discriminator_ = cast_mlp<Other>(discriminator_);
    return out;
  }

  // Layer access for checkpointing.
  Mlp<Scalar>& relation_conv() { return relation_conv_; }
  Mlp<Scalar>& selection_conv() { return selection_conv_; }
  Mlp<Scalar>& join_conv() { return join_conv_; }
  Mlp<Scalar>& extractor() { return extractor_; }
  Dense<Scalar>& head() { return head_; }
  Mlp<Scalar>& discriminator() { return discriminator_; }

 private:
  template <typename>
  friend class Model;

  template <typename Other>
  static Dense<Other> cast_dense(const Dense<Scalar>& d) {
    Dense<Other> out;
    out.weight = d.weight.template cast<Other>();
    out.bias = d.bias.template cast<Other>();
    out.grad_weight = Matrix<Other>::Zero(d.weight.rows(), d.weight.cols());
    out.grad_bias = Matrix<Other>::Zero(d.bias.rows(), 1);
    return out;
  }
  template <typename Other>
  static Mlp<Other> cast_mlp(const Mlp<Scalar>& m) {
    Mlp<Other> out;
    if (m.empty()) return out;
    std::vector<int> widths{m.in_features()};
    for (const auto& l : m.layers()) widths.push_back(l.out_features());
    std::mt19937_64 unused(0);
    out = Mlp<Other>(widths, m.activate_last(), unused);
    for (std::size_t i = 0; i < m.layers().size(); ++i) out.layers()[i] = cast_dense<Other>(m.layers()[i]);
    return out;
  }

  template <typename F, typename... Parts>
  static void visit_parts(F& f, Parts&... parts) {
    (parts.visit(f), ...);
  }

  template <typename Block>
  static void pool_set(const Mlp<Scalar>& conv, const Matrix<Scalar>& members,
                       const std::vector<Eigen::Index>& offsets, int width, typename Mlp<Scalar>::Cache& cache,
                       Block out) {
    if (members.cols() == 0) return;  // every set empty: zero pooled vectors
    if (members.rows() != width) throw DataError("set member width does not match the model");
    const Matrix<Scalar> y = conv.forward(members, &cache);
    for (Eigen::Index q = 0; q + 1 < static_cast<Eigen::Index>(offsets.size()); ++q) {
      const Eigen::Index begin = offsets[q];
      const Eigen::Index count = offsets[q + 1] - begin;
      if (count == 0) continue;
      Vector<Scalar> sum = Vector<Scalar>::Zero(y.rows());
      for (Eigen::Index c = begin; c < begin + count; ++c) sum += y.col(c);
      out.col(q) = sum / Scalar(count);
    }
  }

  template <typename Block>
  static void unpool_set(Mlp<Scalar>& conv, const std::vector<Eigen::Index>& offsets,
                         const typename Mlp<Scalar>::Cache& cache, const Block& d_pooled) {
    if (cache.inputs.empty()) return;
    const Eigen::Index total = offsets.back();
    Matrix<Scalar> dy(d_pooled.rows(), total);
    for (Eigen::Index q = 0; q + 1 < static_cast<Eigen::Index>(offsets.size()); ++q) {
      const Eigen::Index begin = offsets[q];
      const Eigen::Index count = offsets[q + 1] - begin;
      for (Eigen::Index c = begin; c < begin + count; ++c) dy.col(c) = d_pooled.col(q) / Scalar(count);
    }
    conv.backward(cache, std::move(dy));
  }

  Arch arch_ = Arch::Mlp;
  ModelDims dims_;
  std::uint64_t seed_ = 0;
  Mlp<Scalar> relation_conv_, selection_conv_, join_conv_;
  Mlp<Scalar> extractor_;
  Dense<Scalar> head_;
  Mlp<Scalar> discriminator_;
};

template <typename Scalar = float>
Model<Scalar> init_model(Arch arch, const ModelDims& dims, std::uint64_t seed) {
  return Model<Scalar>(arch, dims, seed);
}

/// max(1, exp(log_card)).
inline double cardinality_from_log(double log_card) { return std::max(1.0, std::exp(log_card)); }

/// Inference on full (unmasked) features.
template <typename Scalar>
double predict_cardinality(const Model<Scalar>& model, const SPJQuery& q, const QueryEncoder& encoder) {
  Batch<Scalar> batch;
  if (model.arch() == Arch::Mlp) {
    const FixedEncoding enc = encoder.encode_fixed(q);
    const FixedEncoding* ptr = &enc;
    batch = make_batch<Scalar>(std::span<const FixedEncoding* const>(&ptr, 1));
  } else {
    const SetEncoding enc = encoder.encode_set(q);
    const SetEncoding* ptr = &enc;
    batch = make_batch<Scalar>(std::span<const SetEncoding* const>(&ptr, 1));
  }
  return cardinality_from_log(static_cast<double>(model.forward(batch).log_card(0, 0)));
}

}  // namespace cardood
