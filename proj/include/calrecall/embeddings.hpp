#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "calrecall/featurize.hpp"
#include "calrecall/ingestion.hpp"

namespace calrecall {

using DenseVector = std::vector<float>;

/// Precomputed dense vectors keyed by document (or topic) id, in file order.
class EmbeddingStore {
  public:
    explicit EmbeddingStore(std::size_t dim = 0) : dim_(dim) {}

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }

    /// Throws on wrong length, non-finite values or a repeated id.
    void insert(std::string id, DenseVector values);
    const DenseVector* find(std::string_view id) const;

    const std::vector<std::string>& ids() const { return ids_; }
    const DenseVector& at(std::size_t i) const { return vectors_[i]; }

  private:
    std::size_t dim_;
    std::vector<std::string> ids_;
    std::vector<DenseVector> vectors_;
    std::unordered_map<std::string, std::size_t> index_;
};

enum class EmbeddingFormat { tsv, binary };

/// Reads either format; binary is recognised by its "EMB1" magic. A binary
/// file whose header dim disagrees with `dim` is an error. dim = 0 accepts
/// whatever the file declares (binary) or the first line's arity (tsv).
EmbeddingStore load_embeddings(const std::filesystem::path& path, std::size_t dim);
void write_embeddings(const EmbeddingStore& store, const std::filesystem::path& path, EmbeddingFormat format);
EmbeddingFormat detect_embedding_format(const std::filesystem::path& path);

enum class Fusion {
    e1_sparse_only,
    e2_dense_only,
    e3_concat,
    /// sparse and dense parts scored by two separate models, scores summed
    e4_dual,
};

Fusion parse_fusion(std::string_view name);
std::string_view to_string(Fusion f);
inline bool requires_dense(Fusion f) { return f != Fusion::e1_sparse_only; }

/// Non-owning view of one fused feature vector. Under E3 the dense block
/// occupies logical indices [dense_offset, dense_offset + dense.size()).
struct FeatureRef {
    SparseView sparse;
    std::span<const float> dense;
    std::uint32_t dense_offset = 0;
};

struct FeatureVector {
    SparseVector sparse;
    DenseVector dense;
    std::uint32_t dense_offset = 0;

    FeatureRef ref() const { return {sparse.view(), dense, dense_offset}; }
};

/// Combines a sparse vector with an optional dense vector per strategy.
/// `vocab_size` is the sparse dimension; `id` only labels errors.
FeatureVector fuse(const SparseVector& sparse, const DenseVector* dense, Fusion strategy, std::size_t vocab_size,
                   std::string_view id = {}, float dense_scale = 1.0F);

/// Fused features for every corpus document, row i matching DocIndex i.
class FusedFeatures {
  public:
    /// `store` may be null under E1 and is ignored there. Throws
    /// std::invalid_argument naming the first document without a vector.
    FusedFeatures(const FeatureMatrix& sparse, const Corpus& corpus, const EmbeddingStore* store, Fusion strategy,
                  std::size_t vocab_size, float dense_scale = 1.0F);

    Fusion strategy() const { return strategy_; }
    std::size_t sparse_dim() const { return sparse_dim_; }
    std::size_t dense_dim() const { return dense_dim_; }
    std::size_t rows() const { return sparse_->rows(); }
    /// Total logical dimension of a single model over these features.
    std::size_t dimension() const;

    FeatureRef row(DocIndex i) const;

  private:
    const FeatureMatrix* sparse_;
    Fusion strategy_;
    std::size_t sparse_dim_;
    std::size_t dense_dim_ = 0;
    std::vector<float> dense_;
};

}  // namespace calrecall
