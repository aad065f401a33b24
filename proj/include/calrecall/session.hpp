#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "calrecall/classifier.hpp"
#include "calrecall/embeddings.hpp"
#include "calrecall/featurize.hpp"
#include "calrecall/ingestion.hpp"
#include "calrecall/rerank.hpp"
#include "calrecall/rng.hpp"
#include "calrecall/runlog.hpp"

namespace calrecall {

enum class NegativeSampling {
    /// a fixed number of random unjudged documents (100 by default)
    bmi_fixed,
    /// max(p - n, 0) where p, n count positive and negative judgments
    balanced,
};

enum class ColdStart {
    none,
    /// rank by query/document similarity until the first relevant judgment
    static_rank,
};

NegativeSampling parse_negative_sampling(std::string_view name);
ColdStart parse_cold_start(std::string_view name);

struct SessionConfig {
    Fusion fusion = Fusion::e1_sparse_only;
    FeatureSpace feature_space;
    /// train.seed is unused here: the session generator drives training.
    TrainConfig train;
    NegativeSampling negative_sampling = NegativeSampling::bmi_fixed;
    std::size_t bmi_negatives = 100;
    /// Balanced sampling with min(p - n, 0) instead of max, which never
    /// draws any pseudo-negatives. For reproducing the literal rule only.
    bool literal_min_balance = false;
    std::size_t retrain_every = 1;
    std::size_t batch_size = 1;
    std::optional<RerankPolicy> rerank;
    std::optional<std::size_t> stop_after;
    ColdStart cold_start = ColdStart::none;
    float dense_scale = 1.0F;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Corpus features shared read-only by every session over one corpus,
/// feature space and fusion strategy.
class FeatureIndex {
  public:
    FeatureIndex(const Corpus& corpus, const FeatureSpace& space, Fusion fusion,
                 const EmbeddingStore* doc_embeddings = nullptr, float dense_scale = 1.0F, unsigned threads = 1);
    /// Reuses precomputed sparse rows (e.g. from a feature cache).
    FeatureIndex(const Corpus& corpus, const FeatureSpace& space, Fusion fusion, FeatureMatrix sparse,
                 const EmbeddingStore* doc_embeddings = nullptr, float dense_scale = 1.0F);

    FeatureIndex(const FeatureIndex&) = delete;
    FeatureIndex& operator=(const FeatureIndex&) = delete;

    const Corpus& corpus() const { return *corpus_; }
    const FeatureSpace& space() const { return space_; }
    Fusion fusion() const { return fusion_; }
    float dense_scale() const { return dense_scale_; }
    const FeatureMatrix& sparse() const { return *sparse_; }
    const FusedFeatures& features() const { return *fused_; }

    /// The query as a fused pseudo-document. Its dense part is the topic's
    /// query embedding, which must exist unless the strategy is E1.
    FeatureVector query_features(const Topic& topic, const EmbeddingStore* query_embeddings) const;

  private:
    const Corpus* corpus_;
    FeatureSpace space_;
    Fusion fusion_;
    float dense_scale_;
    std::unique_ptr<FeatureMatrix> sparse_;
    std::unique_ptr<FusedFeatures> fused_;
};

struct Candidate {
    DocIndex doc = 0;
    std::string doc_id;
    double first_stage_score = 0.0;
    double final_score = 0.0;

    friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct CandidateBatch {
    std::vector<Candidate> items;
    /// every document has been judged
    bool exhausted = false;
};

/// A judgment that does not match the offered documents.
class JudgmentError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

/// Everything needed to resume a session without retraining, given its
/// RunLog up to `iteration`.
struct SessionSnapshot {
    std::size_t iteration = 0;
    std::string rng_state;
    Model model;
    std::optional<Model> dense_model;
    std::vector<Candidate> pending;
    std::size_t judgments_since_retrain = 0;
};

nlohmann::json to_json(const SessionSnapshot& snapshot);
SessionSnapshot snapshot_from_json(const nlohmann::json& j);

/// One topic's continuous active learning loop: show the best unjudged
/// document, take a judgment, retrain, repeat. Single writer.
class Session {
  public:
    /// Seeds the training pool with the query as a positive pseudo-document
    /// and trains the initial model on it plus pseudo-negatives.
    Session(Topic topic, const FeatureIndex& index, const EmbeddingStore* query_embeddings, SessionConfig config,
            std::shared_ptr<Scorer> scorer = nullptr);

    const Topic& topic() const { return topic_; }
    const SessionConfig& config() const { return config_; }
    std::size_t iteration() const { return log_.size(); }
    const RunLog& log() const { return log_; }
    bool exhausted() const { return unjudged_ == 0; }
    std::size_t unjudged_count() const { return unjudged_; }
    std::optional<Judgment> judgment(DocIndex doc) const { return judged_[doc]; }
    std::size_t positives() const { return positives_; }
    std::size_t negatives() const { return negatives_; }

    const Model& model() const { return model_; }
    const std::optional<Model>& dense_model() const { return dense_model_; }
    const FeatureVector& seed_features() const { return seed_; }

    /// The batch_size best unjudged documents by final score, ties by
    /// ascending doc_id. Returns the same batch until all of it is judged.
    CandidateBatch next_candidates();

    /// Records a judgment for an offered, unjudged document and retrains
    /// every retrain_every judgments. Throws JudgmentError otherwise.
    void record_judgment(std::string_view doc_id, Judgment judgment);

    /// Human judgments in review order, the synthetic seed, and freshly drawn
    /// pseudo-negatives. Advances the session generator.
    std::vector<LabeledExample> assemble_training_set();

    /// Number of pseudo-negatives the sampling rule asks for right now.
    std::size_t pseudo_negative_count() const;

    /// Replaces the model(s) and drops any pending batch.
    void set_model(Model model, std::optional<Model> dense_model = std::nullopt);

    SessionSnapshot snapshot() const;
    /// Rebuilds state from a snapshot plus the session's RunLog prefix.
    void restore(const SessionSnapshot& snapshot, const RunLog& log);

  private:
    void retrain();
    std::vector<Candidate> rank_unjudged(std::size_t count) const;
    double first_stage_score(DocIndex doc, bool static_rank) const;
    void apply_log_entry(const RunLogEntry& entry);

    Topic topic_;
    const FeatureIndex* index_;
    SessionConfig config_;
    std::shared_ptr<Scorer> scorer_;
    Rng rng_;
    FeatureVector seed_;

    Model model_;
    std::optional<Model> dense_model_;

    RunLog log_;
    std::vector<std::optional<Judgment>> judged_;
    std::vector<Candidate> pending_;
    std::size_t unjudged_ = 0;
    std::size_t positives_ = 0;
    std::size_t negatives_ = 0;
    std::size_t judgments_since_retrain_ = 0;
};

/// Oracle-driven review: judge the top document with the qrels until
/// stop_after iterations or exhaustion.
RunLog run_simulation(const Topic& topic, const FeatureIndex& index, const EmbeddingStore* query_embeddings,
                      const QrelsOracle& oracle, const SessionConfig& config,
                      std::shared_ptr<Scorer> scorer = nullptr);

}  // namespace calrecall
