#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace calrecall {

using TermId = std::uint32_t;
using DocIndex = std::uint32_t;

enum class Judgment : std::uint8_t { nonrelevant = 0, relevant = 1 };

/// Lowercased runs of ASCII letters/digits (bytes >= 0x80 also count as word
/// characters so UTF-8 text is not shredded). No stemming, no stopwords.
std::vector<std::string> tokenize(std::string_view text);

struct Document {
    std::string id;
    std::string text;
    /// tokenize(text), stored as vocabulary ids in the same order.
    std::vector<TermId> tokens;
};

/// Immutable tokenized collection with vocabulary and document frequencies.
class Corpus {
  public:
    /// Tokenizes every (id, text) pair in order. Throws std::invalid_argument
    /// on an empty input or a duplicate id.
    static Corpus build(std::vector<std::pair<std::string, std::string>> docs);

    std::size_t size() const { return docs_.size(); }
    const Document& doc(DocIndex i) const { return docs_[i]; }
    const std::vector<Document>& docs() const { return docs_; }
    std::optional<DocIndex> find(std::string_view doc_id) const;

    std::size_t vocab_size() const { return terms_.size(); }
    const std::string& term(TermId id) const { return terms_[id]; }
    std::optional<TermId> term_id(std::string_view term) const;
    std::uint32_t df(TermId id) const { return df_[id]; }
    double avg_doc_len() const { return avg_doc_len_; }
    std::uint64_t total_tokens() const { return total_tokens_; }

    /// Token strings of a document, reconstructed from the vocabulary.
    std::vector<std::string> tokens(DocIndex i) const;

  private:
    std::vector<Document> docs_;
    std::vector<std::string> terms_;
    std::unordered_map<std::string, TermId> term_index_;
    std::unordered_map<std::string, DocIndex> doc_index_;
    std::vector<std::uint32_t> df_;
    std::uint64_t total_tokens_ = 0;
    double avg_doc_len_ = 0.0;
};

enum class CorpusFormat { tsv, jsonl };

CorpusFormat parse_corpus_format(std::string_view name);
Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format);
void write_corpus(const Corpus& corpus, const std::filesystem::path& path, CorpusFormat format);

struct Topic {
    std::string id;
    std::string query;
};

/// `topic_id<TAB>query` per line.
std::vector<Topic> load_topics(const std::filesystem::path& path);
void write_topics(const std::vector<Topic>& topics, const std::filesystem::path& path);

/// Relevance judgments. Pairs that were never judged read as nonrelevant.
class QrelsOracle {
  public:
    void add(const std::string& topic_id, const std::string& doc_id, Judgment j);

    Judgment lookup(std::string_view topic_id, std::string_view doc_id) const;
    bool has_topic(std::string_view topic_id) const;
    std::size_t relevant_count(std::string_view topic_id) const;
    const std::map<std::string, std::size_t, std::less<>>& r_t() const { return r_t_; }
    std::vector<std::string> topics() const;

    using TopicJudgments = std::map<std::string, Judgment, std::less<>>;
    const std::map<std::string, TopicJudgments, std::less<>>& entries() const { return judgments_; }

  private:
    std::map<std::string, TopicJudgments, std::less<>> judgments_;
    std::map<std::string, std::size_t, std::less<>> r_t_;
};

/// Whitespace separated `topic 0 doc_id rel`; rel > 0 is relevant.
QrelsOracle load_qrels(const std::filesystem::path& path);
void write_qrels(const QrelsOracle& qrels, const std::filesystem::path& path);

struct SyntheticOptions {
    std::size_t background_vocab = 20000;
    std::size_t min_doc_len = 50;
    std::size_t max_doc_len = 150;
    std::size_t markers_per_topic = 10;
    std::size_t min_planted = 3;
    std::size_t max_planted = 6;
};

struct SyntheticCollection {
    Corpus corpus;
    std::vector<Topic> topics;
    QrelsOracle qrels;
};

/// Desk-scale collection with learnable topics: every topic owns a marker
/// vocabulary that appears only in its relevant documents, mixed into
/// Zipf-distributed background text. Deterministic in `seed`.
SyntheticCollection generate_synthetic(std::uint64_t seed, std::size_t n_docs, std::size_t n_topics,
                                       std::size_t relevant_per_topic, const SyntheticOptions& options = {});

}  // namespace calrecall
