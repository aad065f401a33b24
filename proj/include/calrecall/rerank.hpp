#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "calrecall/ingestion.hpp"

namespace calrecall {

/// Whitespace tokens are the truncation unit; the scorer may re-truncate by
/// its own subword tokenizer.
struct TruncationBudget {
    std::size_t query_tokens = 64;
    std::size_t doc_tokens = 445;
};

/// "[CLS] {q} [SEP] {d} [SEP]"
std::string build_monobert_input(std::string_view query, std::string_view doc_text,
                                 const TruncationBudget& budget = {});

/// "Query: {q} Document: {d} Relevant: " (the trailing space is part of it)
std::string build_monot5_input(std::string_view query, std::string_view doc_text,
                               const TruncationBudget& budget = {});

/// The first `limit` whitespace-separated tokens joined by single spaces.
std::string truncate_tokens(std::string_view text, std::size_t limit);

enum class InputFormat { monobert, monot5 };
enum class ScoreNormalization { none, minmax_within_k };

InputFormat parse_input_format(std::string_view name);
ScoreNormalization parse_normalization(std::string_view name);

struct RerankPolicy {
    std::size_t k = 10;
    bool fuse_sum = false;
    ScoreNormalization normalization = ScoreNormalization::minmax_within_k;
    InputFormat input = InputFormat::monobert;
    TruncationBudget budget;
    /// `http://host:port/path` or `file:/path/to/scores.tsv`
    std::string scorer;
    std::chrono::milliseconds timeout{10000};
    /// The scorer learns from the judgment history; cached scores are only
    /// reused while the history is unchanged.
    bool stateful_scorer = false;

    void validate() const;
};

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;

    friend bool operator==(const ScoredDoc&, const ScoredDoc&) = default;
};

struct RerankCandidate {
    std::string doc_id;
    std::string input;
};

struct HistoryItem {
    std::string doc_id;
    Judgment label = Judgment::nonrelevant;
};

struct RerankRequest {
    std::string topic_id;
    std::string query;
    /// the review iteration these scores are for (1-based)
    std::size_t iteration = 0;
    std::vector<RerankCandidate> candidates;
    std::vector<HistoryItem> history;
};

struct RerankResponse {
    std::vector<ScoredDoc> scores;
};

nlohmann::json to_json(const RerankRequest& request);
/// Parses {"scores": [{"doc_id": ..., "score": ...}]}; throws ScorerError
/// (malformed) on anything else.
RerankResponse parse_rerank_response(const nlohmann::json& body, const RerankRequest& request);

class ScorerError : public std::runtime_error {
  public:
    enum class Kind { timeout, malformed, coverage, transport };

    ScorerError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

  private:
    Kind kind_;
};

/// Throws ScorerError(coverage) naming the first requested doc without a
/// score, or malformed on a non-finite score.
void validate_response(const RerankRequest& request, const RerankResponse& response);

/// Reorders the top k of `first_stage` (given best first). With fuse_sum the
/// key is the sum of both scores, each min-max normalized over the k
/// candidates unless normalization is none; otherwise the reranker score
/// alone. Ties keep first-stage order. Entries below rank k are unchanged.
std::vector<ScoredDoc> apply_rerank(const std::vector<ScoredDoc>& first_stage, const RerankPolicy& policy,
                                    const RerankResponse& response);

class Scorer {
  public:
    virtual ~Scorer() = default;
    virtual RerankResponse score(const RerankRequest& request) = 0;
};

/// JSON over HTTP POST. One retry; a timeout surfaces as ScorerError(timeout).
class HttpScorer : public Scorer {
  public:
    HttpScorer(std::string url, std::chrono::milliseconds timeout);
    RerankResponse score(const RerankRequest& request) override;

  private:
    std::string origin_;
    std::string path_;
    std::chrono::milliseconds timeout_;
};

/// Scores from `topic_id<TAB>iteration<TAB>doc_id<TAB>score` lines. An
/// iteration of `*` applies to every iteration without its own entry.
class OfflineScorer : public Scorer {
  public:
    explicit OfflineScorer(const std::filesystem::path& path);
    RerankResponse score(const RerankRequest& request) override;

  private:
    // (topic, iteration or 0 for '*', doc) -> score
    std::map<std::tuple<std::string, std::size_t, std::string>, double, std::less<>> scores_;
};

/// Memoizes per (topic_id, doc_id, scorer state version). The version is the judgment
/// history length for stateful scorers and constant otherwise.
class CachingScorer : public Scorer {
  public:
    CachingScorer(std::shared_ptr<Scorer> inner, bool stateful);
    RerankResponse score(const RerankRequest& request) override;
    std::size_t hits() const { return hits_; }

  private:
    std::shared_ptr<Scorer> inner_;
    bool stateful_;
    std::mutex mutex_;
    std::map<std::tuple<std::string, std::string, std::size_t>, double> cache_;
    std::size_t hits_ = 0;
};

/// OfflineScorer for `file:` descriptors, otherwise a cached HttpScorer.
std::shared_ptr<Scorer> make_scorer(const RerankPolicy& policy);

}  // namespace calrecall
