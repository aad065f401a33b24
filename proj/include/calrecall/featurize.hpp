#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "calrecall/ingestion.hpp"

namespace calrecall {

/// Read-only view of sparse (index, weight) pairs, indices strictly increasing.
struct SparseView {
    std::span<const std::uint32_t> indices;
    std::span<const double> weights;

    std::size_t size() const { return indices.size(); }
    bool empty() const { return indices.empty(); }
};

struct SparseVector {
    std::vector<std::uint32_t> indices;
    std::vector<double> weights;

    std::size_t size() const { return indices.size(); }
    bool empty() const { return indices.empty(); }
    SparseView view() const { return {indices, weights}; }
    void push_back(std::uint32_t index, double weight)
    {
        indices.push_back(index);
        weights.push_back(weight);
    }
};

/// O(|a| + |b|) merge over matching indices.
double dot(SparseView a, SparseView b);
double norm2(SparseView v);

enum class Weighting {
    tfidf_log,
    bm25,
    /// tf-idf block in [0, V), bm25 block in [V, 2V)
    both,
};

Weighting parse_weighting(std::string_view name);
std::string_view to_string(Weighting w);

struct FeatureSpace {
    Weighting weighting = Weighting::tfidf_log;
    double k1 = 0.9;
    double b = 0.4;
    bool normalized = true;

    /// Throws ConfigError when k1 <= 0 or b is outside [0, 1].
    void validate() const;
    /// Number of sparse feature indices over `corpus`.
    std::size_t dimension(const Corpus& corpus) const;

    friend bool operator==(const FeatureSpace&, const FeatureSpace&) = default;
};

/// Weights for a bag of term ids. `length` is the token count used by bm25
/// length normalization.
SparseVector featurize_terms(const Corpus& corpus, const FeatureSpace& space, std::span<const TermId> terms,
                             std::size_t length);

SparseVector featurize_doc(const Corpus& corpus, const FeatureSpace& space, DocIndex doc);

/// The query as a pseudo-document over the corpus statistics; terms outside
/// the vocabulary are dropped.
SparseVector featurize_query(const Corpus& corpus, const FeatureSpace& space, std::string_view query);

/// Row-compressed feature vectors for a whole corpus, indexed by DocIndex.
class FeatureMatrix {
  public:
    FeatureMatrix() = default;

    std::size_t rows() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
    std::size_t nonzeros() const { return indices_.size(); }
    SparseView row(DocIndex i) const
    {
        auto begin = offsets_[i];
        auto len = offsets_[i + 1] - begin;
        return {std::span(indices_).subspan(begin, len), std::span(weights_).subspan(begin, len)};
    }

    void append(SparseView v);

    friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

  private:
    std::vector<std::size_t> offsets_{0};
    std::vector<std::uint32_t> indices_;
    std::vector<double> weights_;
};

/// featurize_doc for every document, fanned out over `threads` workers.
FeatureMatrix featurize_corpus(const Corpus& corpus, const FeatureSpace& space, unsigned threads = 1);

/// `doc_id<TAB>index:weight,index:weight,...` per document in corpus order.
void write_feature_cache(const Corpus& corpus, const FeatureMatrix& features, const std::filesystem::path& path);
/// Rows must name the corpus documents in corpus order.
FeatureMatrix read_feature_cache(const Corpus& corpus, const std::filesystem::path& path);

}  // namespace calrecall
