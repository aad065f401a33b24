#include <csignal>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <pthread.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "calrecall/embeddings.hpp"
#include "calrecall/error.hpp"
#include "calrecall/eval.hpp"
#include "calrecall/ingestion.hpp"
#include "calrecall/manifest.hpp"
#include "calrecall/rerank.hpp"
#include "calrecall/runner.hpp"
#include "calrecall/service.hpp"
#include "calrecall/stats.hpp"

namespace fs = std::filesystem;
using namespace calrecall;

namespace {

/// Command-line values that override the manifest when given.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> jobs;
    std::optional<std::size_t> k;
    std::optional<std::string> fusion;
    std::optional<std::string> negatives;
    std::optional<std::size_t> stop_after;
    std::optional<std::string> out;

    void attach(CLI::App* app)
    {
        app->add_option("--seed", seed, "Session seed");
        app->add_option("--jobs", jobs, "Topics reviewed in parallel")->check(CLI::PositiveNumber);
        app->add_option("--k", k, "Rerank depth")->check(CLI::PositiveNumber);
        app->add_option("--fusion", fusion, "Feature fusion strategy")
            ->check(CLI::IsMember({"e1", "e2", "e3", "e4"}));
        app->add_option("--negatives", negatives, "Pseudo-negative sampling")
            ->check(CLI::IsMember({"bmi", "balanced"}));
        app->add_option("--stop-after", stop_after, "Review budget per topic");
    }

    void apply(RunManifest& m) const
    {
        if (seed) {
            m.session.seed = *seed;
        }
        if (jobs) {
            m.jobs = *jobs;
        }
        if (k) {
            if (!m.session.rerank) {
                throw ConfigError("k", "--k needs reranking enabled in the manifest");
            }
            m.session.rerank->k = *k;
        }
        if (fusion) {
            m.session.fusion = parse_fusion(*fusion);
        }
        if (negatives) {
            m.session.negative_sampling = parse_negative_sampling(*negatives);
        }
        if (stop_after) {
            m.session.stop_after = *stop_after;
        }
        if (out) {
            m.out_dir = *out;
        }
    }
};

std::string env_or(const char* name, std::string fallback)
{
    const char* v = std::getenv(name);
    return v != nullptr && *v != '\0' ? std::string(v) : fallback;
}

int serve(RunManifest manifest, const std::string& bind_address, const fs::path& data_dir)
{
    // fail on a bad manifest before taking the port
    manifest.validate();
    auto [host, port] = parse_bind_address(bind_address);

    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    ReviewService service(data_dir, env_or("AUTH_TOKEN", ""));
    const int bound = service.bind(host, port);
    if (bound < 0) {
        throw IoError("cannot bind " + bind_address);
    }
    std::thread server([&] { service.listen(); });
    std::cout << "listening on " << host << ":" << bound << std::endl;

    try {
        service.load(manifest);
    } catch (...) {
        service.stop();
        server.join();
        throw;
    }
    std::cout << "ready" << std::endl;

    int sig = 0;
    sigwait(&signals, &sig);
    service.stop();
    server.join();
    return 0;
}

nlohmann::ordered_json table_summary(const PercentTable& table)
{
    nlohmann::ordered_json out = nlohmann::ordered_json::object();
    out["topics"] = table.topics.size();
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
        auto reports = reports_from_table(table, c);
        out["mean_percent"][table.columns[c]] = aggregate(reports).recall_at_4r_1000 * 100.0;
    }
    return out;
}

void print_verdicts(const nlohmann::ordered_json& comparison, double alpha)
{
    for (const auto& [name, result] : comparison["metrics"].items()) {
        if (result.value("zero_variance", false)) {
            std::cerr << "verdict: " << name << ": every paired difference is equal; no test\n";
            continue;
        }
        std::cerr << "verdict: " << name << ": p = " << result["p_value"].get<double>()
                  << (result["significant"].get<bool>() ? " < " : " >= ") << alpha
                  << (result["significant"].get<bool>() ? " significant" : " not significant") << "\n";
    }
}

int run_cli(int argc, char** argv)
{
    CLI::App app{"calrecall: continuous active learning for high-recall retrieval"};
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Tokenize and featurize a corpus, caching the features");
    std::string ingest_manifest;
    std::string ingest_corpus;
    std::string ingest_format = "tsv";
    std::string ingest_cache;
    std::string ingest_weighting;
    unsigned ingest_jobs = 1;
    ingest->add_option("--manifest", ingest_manifest, "Take corpus and feature settings from a manifest");
    ingest->add_option("--corpus", ingest_corpus, "Corpus file");
    ingest->add_option("--format", ingest_format, "tsv or jsonl");
    ingest->add_option("--cache-dir", ingest_cache, "Feature cache folder");
    ingest->add_option("--weighting", ingest_weighting, "tfidf, bm25 or both");
    ingest->add_option("--jobs", ingest_jobs, "Featurization threads")->check(CLI::PositiveNumber);

    // run
    auto* run = app.add_subcommand("run", "Simulate review of every topic against the qrels");
    std::string run_manifest;
    Overrides run_overrides;
    run->add_option("manifest", run_manifest, "Run manifest (INI)")->required();
    run->add_option("--out", run_overrides.out, "Output folder");
    run_overrides.attach(run);

    // eval
    auto* eval = app.add_subcommand("eval", "Recompute metrics from persisted run logs");
    std::string eval_logs;
    std::string eval_qrels;
    std::string eval_out;
    std::string eval_table;
    eval->add_option("logs", eval_logs, "Folder of {topic}/runlog.tsv");
    eval->add_option("--qrels", eval_qrels, "Qrels file");
    eval->add_option("--out", eval_out, "Write reports here");
    eval->add_option("--table", eval_table, "Per-topic percentage table instead of logs");

    // compare
    auto* compare = app.add_subcommand("compare", "Paired t-test between two report files");
    std::vector<std::string> compare_reports_paths;
    std::string compare_table;
    double alpha = 0.05;
    compare->add_option("reports", compare_reports_paths, "Two report files")->expected(0, 2);
    compare->add_option("--table", compare_table, "Compare the first two columns of a percentage table");
    compare->add_option("--alpha", alpha, "Threshold for the verdict line")->check(CLI::Range(0.0, 1.0));

    // serve
    auto* serve_cmd = app.add_subcommand("serve", "HTTP review service");
    std::string serve_manifest;
    std::string bind_address = env_or("BIND_ADDR", "127.0.0.1:8080");
    std::string data_dir = env_or("DATA_DIR", "data");
    Overrides serve_overrides;
    serve_cmd->add_option("manifest", serve_manifest, "Manifest (INI)")->required();
    serve_cmd->add_option("--bind", bind_address, "host:port (env BIND_ADDR)");
    serve_cmd->add_option("--data-dir", data_dir, "Session storage (env DATA_DIR)");
    serve_overrides.attach(serve_cmd);

    // emb-convert
    auto* convert = app.add_subcommand("emb-convert", "Convert embeddings between tsv and binary");
    std::string convert_in;
    std::string convert_out;
    std::string convert_to;
    std::size_t convert_dim = 0;
    convert->add_option("input", convert_in, "Source file")->required();
    convert->add_option("output", convert_out, "Destination file")->required();
    convert->add_option("--to", convert_to, "Target format")->required()->check(CLI::IsMember({"tsv", "binary"}));
    convert->add_option("--dim", convert_dim, "Expected dimension (0 accepts the file's)");

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic collection and a manifest for it");
    std::string synth_out;
    std::uint64_t synth_seed = 1;
    std::size_t synth_docs = 20000;
    std::size_t synth_topics = 4;
    std::size_t synth_relevant = 50;
    synth->add_option("--out", synth_out, "Destination folder")->required();
    synth->add_option("--seed", synth_seed, "Generator seed");
    synth->add_option("--docs", synth_docs, "Documents")->check(CLI::PositiveNumber);
    synth->add_option("--topics", synth_topics, "Topics")->check(CLI::PositiveNumber);
    synth->add_option("--relevant", synth_relevant, "Relevant documents per topic")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);
        }
        std::cerr << "error: usage: " << e.what() << "\n";
        return 2;
    }

    if (*ingest) {
        FeatureSpace space;
        fs::path corpus_path;
        CorpusFormat format = parse_corpus_format(ingest_format);
        std::optional<fs::path> cache;
        if (!ingest_manifest.empty()) {
            auto m = load_manifest(ingest_manifest);
            space = m.session.feature_space;
            corpus_path = m.corpus;
            format = m.corpus_format;
            cache = m.cache_dir;
        }
        if (!ingest_corpus.empty()) {
            corpus_path = ingest_corpus;
        }
        if (corpus_path.empty()) {
            throw ConfigError("corpus", "give --corpus or --manifest");
        }
        if (!ingest_cache.empty()) {
            cache = ingest_cache;
        }
        if (!ingest_weighting.empty()) {
            space.weighting = parse_weighting(ingest_weighting);
        }
        bool hit = false;
        auto stats = cmd_ingest(corpus_path, format, space, cache, ingest_jobs, &hit);
        std::cout << format_stats(stats) << "\n";
        if (cache) {
            std::cout << "feature cache " << (hit ? "hit" : "miss") << "\n";
        }
        return 0;
    }
    if (*run) {
        auto m = load_manifest(run_manifest);
        run_overrides.apply(m);
        auto reports = cmd_run(m);
        std::cout << to_json(aggregate(reports)).dump() << "\n";
        return 0;
    }
    if (*eval) {
        if (!eval_table.empty()) {
            std::cout << table_summary(load_percent_table(eval_table)).dump(2) << "\n";
            return 0;
        }
        if (eval_logs.empty() || eval_qrels.empty()) {
            throw ConfigError("eval", "give a logs folder and --qrels, or --table");
        }
        std::optional<fs::path> out;
        if (!eval_out.empty()) {
            out = eval_out;
        }
        auto reports = cmd_eval(eval_logs, eval_qrels, out);
        std::cout << summary_document(reports).dump(2) << "\n";
        return 0;
    }
    if (*compare) {
        std::vector<MetricsReport> a;
        std::vector<MetricsReport> b;
        if (!compare_table.empty()) {
            auto table = load_percent_table(compare_table);
            if (table.columns.size() < 2) {
                throw ConfigError("table", "needs two value columns");
            }
            a = reports_from_table(table, 0);
            b = reports_from_table(table, 1);
        } else {
            if (compare_reports_paths.size() != 2) {
                throw ConfigError("reports", "give two report files or --table");
            }
            a = load_reports(compare_reports_paths[0]);
            b = load_reports(compare_reports_paths[1]);
        }
        auto result = compare_reports(a, b, alpha);
        std::cout << result.dump(2) << "\n";
        print_verdicts(result, alpha);
        return 0;
    }
    if (*serve_cmd) {
        auto m = load_manifest(serve_manifest);
        serve_overrides.apply(m);
        return serve(std::move(m), bind_address, data_dir);
    }
    if (*convert) {
        auto store = load_embeddings(convert_in, convert_dim);
        write_embeddings(store, convert_out, convert_to == "tsv" ? EmbeddingFormat::tsv : EmbeddingFormat::binary);
        std::cout << "vectors=" << store.size() << " dim=" << store.dim() << "\n";
        return 0;
    }
    if (*synth) {
        auto collection = generate_synthetic(synth_seed, synth_docs, synth_topics, synth_relevant);
        const fs::path dir = synth_out;
        write_corpus(collection.corpus, dir / "corpus.tsv", CorpusFormat::tsv);
        write_topics(collection.topics, dir / "topics.tsv");
        write_qrels(collection.qrels, dir / "qrels.txt");
        RunManifest m;
        m.corpus = "corpus.tsv";
        m.topics = "topics.tsv";
        m.qrels = "qrels.txt";
        m.out_dir = "out";
        m.session.stop_after = budget_4r_1000(synth_relevant);
        write_manifest(m, dir / "manifest.ini");
        std::cout << "documents=" << collection.corpus.size() << " topics=" << collection.topics.size() << "\n";
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    try {
        return run_cli(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
    } catch (const ParseError& e) {
        std::cerr << "error: parse: " << e.what() << "\n";
    } catch (const IoError& e) {
        std::cerr << "error: io: " << e.what() << "\n";
    } catch (const ScorerError& e) {
        std::cerr << "error: scorer: " << e.what() << "\n";
    } catch (const ZeroVarianceError& e) {
        std::cerr << "error: stats: " << e.what() << "\n";
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: input: " << e.what() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
    }
    return 1;
}
