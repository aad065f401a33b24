#include "calrecall/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "calrecall/error.hpp"
#include "calrecall/runlog.hpp"
#include "calrecall/text_io.hpp"

namespace calrecall {

namespace fs = std::filesystem;

const EmbeddingStore* DataSet::query_embeddings() const
{
    if (topic_embeddings) {
        return &*topic_embeddings;
    }
    return doc_embeddings ? &*doc_embeddings : nullptr;
}

std::unique_ptr<DataSet> load_dataset(const RunManifest& manifest)
{
    auto data = std::make_unique<DataSet>(DataSet{load_corpus(manifest.corpus, manifest.corpus_format),
                                                  load_topics(manifest.topics), load_qrels(manifest.qrels),
                                                  std::nullopt, std::nullopt});
    if (manifest.embeddings) {
        data->doc_embeddings = load_embeddings(*manifest.embeddings, manifest.embedding_dim);
    }
    if (manifest.query_embeddings) {
        data->topic_embeddings = load_embeddings(*manifest.query_embeddings, manifest.embedding_dim);
    }
    return data;
}

namespace {

// FNV-1a, 64 bit
struct Digest {
    std::uint64_t h = 14695981039346656037ULL;

    void add(std::string_view bytes)
    {
        for (unsigned char c : bytes) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        // separator so ("ab","c") and ("a","bc") differ
        h ^= 0xff;
        h *= 1099511628211ULL;
    }
};

}  // namespace

std::string feature_cache_key(const Corpus& corpus, const FeatureSpace& space)
{
    Digest d;
    d.add(to_string(space.weighting));
    d.add(format_double(space.k1));
    d.add(format_double(space.b));
    d.add(space.normalized ? "l2" : "raw");
    for (const auto& doc : corpus.docs()) {
        d.add(doc.id);
        d.add(doc.text);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(d.h));
    return buf;
}

FeatureMatrix load_or_build_features(const Corpus& corpus, const FeatureSpace& space,
                                     const std::optional<fs::path>& cache_dir, unsigned threads, bool* cache_hit)
{
    if (cache_hit != nullptr) {
        *cache_hit = false;
    }
    if (!cache_dir) {
        return featurize_corpus(corpus, space, threads);
    }
    const fs::path file = *cache_dir / ("features-" + feature_cache_key(corpus, space) + ".tsv");
    if (fs::exists(file)) {
        auto features = read_feature_cache(corpus, file);
        if (cache_hit != nullptr) {
            *cache_hit = true;
        }
        return features;
    }
    auto features = featurize_corpus(corpus, space, threads);
    // write then rename so a concurrent reader never sees half a file
    fs::path tmp = file;
    tmp += ".tmp";
    write_feature_cache(corpus, features, tmp);
    fs::rename(tmp, file);
    return features;
}

std::unique_ptr<FeatureIndex> build_index(const DataSet& data, const RunManifest& manifest, bool* cache_hit)
{
    const auto& s = manifest.session;
    auto sparse = load_or_build_features(data.corpus, s.feature_space, manifest.cache_dir, manifest.jobs, cache_hit);
    const EmbeddingStore* docs = data.doc_embeddings ? &*data.doc_embeddings : nullptr;
    return std::make_unique<FeatureIndex>(data.corpus, s.feature_space, s.fusion, std::move(sparse), docs,
                                          s.dense_scale);
}

std::string format_stats(const IngestStats& stats)
{
    std::ostringstream out;
    out << "documents=" << stats.documents << " vocabulary=" << stats.vocabulary << " tokens=" << stats.tokens
        << " avg_doc_len=" << format_double(stats.avg_doc_len) << " nonzeros=" << stats.nonzeros;
    return out.str();
}

IngestStats cmd_ingest(const fs::path& corpus_path, CorpusFormat format, const FeatureSpace& space,
                       const std::optional<fs::path>& cache_dir, unsigned threads, bool* cache_hit)
{
    space.validate();
    auto corpus = load_corpus(corpus_path, format);
    auto features = load_or_build_features(corpus, space, cache_dir, threads, cache_hit);
    return {corpus.size(), corpus.vocab_size(), corpus.total_tokens(), corpus.avg_doc_len(), features.nonzeros()};
}

void write_topic_outputs(const MetricsReport& report, const fs::path& dir)
{
    write_json(to_json(report), dir / "report.json");
    write_gain_csv(report.gain_curve, dir / "gain.csv");
}

std::vector<MetricsReport> cmd_run(const RunManifest& manifest)
{
    manifest.validate();
    auto data = load_dataset(manifest);
    for (const auto& topic : data->topics) {
        if (!data->qrels.has_topic(topic.id)) {
            throw std::invalid_argument("qrels have no judgments for topic '" + topic.id + "'");
        }
    }
    auto index = build_index(*data, manifest);
    std::shared_ptr<Scorer> scorer;
    if (manifest.session.rerank) {
        scorer = make_scorer(*manifest.session.rerank);
    }

    const auto& topics = data->topics;
    std::vector<MetricsReport> reports(topics.size());
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= topics.size()) {
                return;
            }
            {
                std::lock_guard lock(error_mutex);
                if (error) {
                    return;
                }
            }
            try {
                const auto& topic = topics[i];
                auto log = run_simulation(topic, *index, data->query_embeddings(), data->qrels, manifest.session,
                                          scorer);
                const fs::path dir = manifest.out_dir / topic.id;
                write_runlog(log, dir / "runlog.tsv");
                reports[i] = evaluate(topic.id, log, data->qrels.relevant_count(topic.id));
                write_topic_outputs(reports[i], dir);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) {
                    error = std::current_exception();
                }
            }
        }
    };

    const unsigned workers = std::max(1U, std::min<unsigned>(manifest.jobs, static_cast<unsigned>(topics.size())));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back(worker);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    if (error) {
        std::rethrow_exception(error);
    }
    write_json(summary_document(reports), manifest.out_dir / "summary.json");
    return reports;
}

std::vector<MetricsReport> cmd_eval(const fs::path& logs_dir, const fs::path& qrels_path,
                                    const std::optional<fs::path>& out_dir)
{
    if (!fs::is_directory(logs_dir)) {
        throw IoError("not a directory: " + logs_dir.string());
    }
    auto qrels = load_qrels(qrels_path);
    std::vector<fs::path> topic_dirs;
    for (const auto& entry : fs::directory_iterator(logs_dir)) {
        if (entry.is_directory() && fs::exists(entry.path() / "runlog.tsv")) {
            topic_dirs.push_back(entry.path());
        }
    }
    std::sort(topic_dirs.begin(), topic_dirs.end());
    if (topic_dirs.empty()) {
        throw std::invalid_argument("no {topic}/runlog.tsv under " + logs_dir.string());
    }

    std::vector<MetricsReport> reports;
    for (const auto& dir : topic_dirs) {
        const std::string topic = dir.filename().string();
        if (!qrels.has_topic(topic)) {
            throw std::invalid_argument("qrels have no judgments for topic '" + topic + "'");
        }
        reports.push_back(evaluate(topic, load_runlog(dir / "runlog.tsv"), qrels.relevant_count(topic)));
        if (out_dir) {
            write_topic_outputs(reports.back(), *out_dir / topic);
        }
    }
    if (out_dir) {
        write_json(summary_document(reports), *out_dir / "summary.json");
    }
    return reports;
}

}  // namespace calrecall
