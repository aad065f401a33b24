#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "calrecall/embeddings.hpp"
#include "calrecall/eval.hpp"
#include "calrecall/ingestion.hpp"
#include "calrecall/manifest.hpp"
#include "calrecall/session.hpp"

namespace calrecall {

struct DataSet {
    Corpus corpus;
    std::vector<Topic> topics;
    QrelsOracle qrels;
    std::optional<EmbeddingStore> doc_embeddings;
    std::optional<EmbeddingStore> topic_embeddings;

    /// Topic vectors: the separate store when given, else the document store.
    const EmbeddingStore* query_embeddings() const;
};

/// Loads corpus, topics, qrels and (when configured) embeddings. The result
/// must stay put while a FeatureIndex refers to its corpus.
std::unique_ptr<DataSet> load_dataset(const RunManifest& manifest);

/// Hex digest of the corpus content and the feature parameters.
std::string feature_cache_key(const Corpus& corpus, const FeatureSpace& space);

/// Reads `{cache_dir}/features-{key}.tsv` when present, else featurizes and
/// writes it. `cache_hit` reports which happened.
FeatureMatrix load_or_build_features(const Corpus& corpus, const FeatureSpace& space,
                                     const std::optional<std::filesystem::path>& cache_dir, unsigned threads,
                                     bool* cache_hit = nullptr);

std::unique_ptr<FeatureIndex> build_index(const DataSet& data, const RunManifest& manifest,
                                          bool* cache_hit = nullptr);

struct IngestStats {
    std::size_t documents = 0;
    std::size_t vocabulary = 0;
    std::uint64_t tokens = 0;
    double avg_doc_len = 0.0;
    std::size_t nonzeros = 0;
};

std::string format_stats(const IngestStats& stats);

IngestStats cmd_ingest(const std::filesystem::path& corpus_path, CorpusFormat format, const FeatureSpace& space,
                       const std::optional<std::filesystem::path>& cache_dir, unsigned threads,
                       bool* cache_hit = nullptr);

/// One simulated review per topic, `manifest.jobs` topics at a time. Writes
/// {out}/{topic}/runlog.tsv, report.json and gain.csv plus {out}/summary.json.
/// Reports come back in topic-file order.
std::vector<MetricsReport> cmd_run(const RunManifest& manifest);

/// Recomputes reports from {logs_dir}/{topic}/runlog.tsv. With `out_dir`,
/// writes them in the cmd_run layout.
std::vector<MetricsReport> cmd_eval(const std::filesystem::path& logs_dir, const std::filesystem::path& qrels_path,
                                    const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Writes report.json and gain.csv for one topic under `dir`.
void write_topic_outputs(const MetricsReport& report, const std::filesystem::path& dir);

}  // namespace calrecall
