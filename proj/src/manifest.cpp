#include "calrecall/manifest.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "calrecall/error.hpp"
#include "calrecall/text_io.hpp"

namespace calrecall {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

std::string trimmed(const std::string& s)
{
    auto begin = s.find_first_not_of(" \t");
    if (begin == std::string::npos) {
        return {};
    }
    auto end = s.find_last_not_of(" \t");
    return s.substr(begin, end - begin + 1);
}

bool parse_bool(const std::string& field, const std::string& value)
{
    if (value == "true" || value == "yes" || value == "1" || value == "on") {
        return true;
    }
    if (value == "false" || value == "no" || value == "0" || value == "off") {
        return false;
    }
    throw ConfigError(field, "expected true or false, got '" + value + "'");
}

long long parse_count(const std::string& field, const std::string& value, long long min)
{
    auto v = parse_int(value);
    if (!v || *v < min) {
        throw ConfigError(field, "expected an integer >= " + std::to_string(min) + ", got '" + value + "'");
    }
    return *v;
}

double parse_real(const std::string& field, const std::string& value)
{
    auto v = parse_double(value);
    if (!v) {
        throw ConfigError(field, "expected a number, got '" + value + "'");
    }
    return *v;
}

fs::path resolve(const fs::path& base, const std::string& value)
{
    fs::path p(value);
    if (p.is_relative() && !base.empty()) {
        return base / p;
    }
    return p;
}

template <typename Parse>
auto parse_field(const std::string& field, Parse parse)
{
    try {
        return parse();
    } catch (const ConfigError& e) {
        // re-tag with the fully qualified key
        std::string what = e.what();
        auto colon = what.find(": ");
        throw ConfigError(field, colon == std::string::npos ? what : what.substr(colon + 2));
    }
}

std::string_view to_string(NegativeSampling n) { return n == NegativeSampling::bmi_fixed ? "bmi" : "balanced"; }
std::string_view to_string(ColdStart c) { return c == ColdStart::none ? "none" : "static_rank"; }
std::string_view to_string(InputFormat f) { return f == InputFormat::monobert ? "monobert" : "monot5"; }
std::string_view to_string(ScoreNormalization n) { return n == ScoreNormalization::none ? "none" : "minmax"; }
std::string_view to_string(CorpusFormat f) { return f == CorpusFormat::tsv ? "tsv" : "jsonl"; }

}  // namespace

void RunManifest::validate() const
{
    session.validate();
    if (jobs < 1) {
        throw ConfigError("run.jobs", "must be >= 1");
    }
    if (snapshot_every < 1) {
        throw ConfigError("service.snapshot_every", "must be >= 1");
    }
    auto must_exist = [](const char* field, const fs::path& p) {
        if (p.empty()) {
            throw ConfigError(field, "missing");
        }
        if (!fs::exists(p)) {
            throw ConfigError(field, "no such file: " + p.string());
        }
    };
    must_exist("data.corpus", corpus);
    must_exist("data.topics", topics);
    must_exist("data.qrels", qrels);
    if (embeddings) {
        must_exist("data.embeddings", *embeddings);
    }
    if (query_embeddings) {
        must_exist("data.query_embeddings", *query_embeddings);
    }
    if (requires_dense(session.fusion)) {
        if (!embeddings) {
            throw ConfigError("data.embeddings", "required by fusion " + std::string(to_string(session.fusion)));
        }
        if (embedding_dim == 0) {
            throw ConfigError("data.embedding_dim", "required by fusion " + std::string(to_string(session.fusion)));
        }
    }
    if (session.rerank && session.rerank->scorer.rfind("file:", 0) == 0) {
        must_exist("rerank.scorer", session.rerank->scorer.substr(5));
    }
}

RunManifest parse_manifest(std::istream& in, const fs::path& base_dir)
{
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ParseError("manifest", e.line(), e.message());
    }

    RunManifest m;
    auto& s = m.session;
    bool rerank_enabled = false;
    RerankPolicy rerank;

    using Setter = std::function<void(const std::string& field, const std::string& value)>;
    const std::map<std::string, Setter> setters{
        {"data.corpus", [&](auto&, auto& v) { m.corpus = resolve(base_dir, v); }},
        {"data.corpus_format", [&](auto& f, auto& v) { m.corpus_format = parse_field(f, [&] { return parse_corpus_format(v); }); }},
        {"data.topics", [&](auto&, auto& v) { m.topics = resolve(base_dir, v); }},
        {"data.qrels", [&](auto&, auto& v) { m.qrels = resolve(base_dir, v); }},
        {"data.embeddings", [&](auto&, auto& v) { m.embeddings = resolve(base_dir, v); }},
        {"data.query_embeddings", [&](auto&, auto& v) { m.query_embeddings = resolve(base_dir, v); }},
        {"data.embedding_dim", [&](auto& f, auto& v) { m.embedding_dim = parse_count(f, v, 1); }},
        {"data.cache_dir", [&](auto&, auto& v) { m.cache_dir = resolve(base_dir, v); }},

        {"features.weighting", [&](auto& f, auto& v) { s.feature_space.weighting = parse_field(f, [&] { return parse_weighting(v); }); }},
        {"features.k1", [&](auto& f, auto& v) { s.feature_space.k1 = parse_real(f, v); }},
        {"features.b", [&](auto& f, auto& v) { s.feature_space.b = parse_real(f, v); }},
        {"features.normalize", [&](auto& f, auto& v) { s.feature_space.normalized = parse_bool(f, v); }},

        {"train.lambda", [&](auto& f, auto& v) { s.train.lambda = parse_real(f, v); }},
        {"train.epochs", [&](auto& f, auto& v) { s.train.epochs = static_cast<unsigned>(parse_count(f, v, 1)); }},
        {"train.mode", [&](auto& f, auto& v) { s.train.mode = parse_field(f, [&] { return parse_train_mode(v); }); }},

        {"session.fusion", [&](auto& f, auto& v) { s.fusion = parse_field(f, [&] { return parse_fusion(v); }); }},
        {"session.negatives", [&](auto& f, auto& v) { s.negative_sampling = parse_field(f, [&] { return parse_negative_sampling(v); }); }},
        {"session.bmi_negatives", [&](auto& f, auto& v) { s.bmi_negatives = parse_count(f, v, 0); }},
        {"session.literal_min_balance", [&](auto& f, auto& v) { s.literal_min_balance = parse_bool(f, v); }},
        {"session.retrain_every", [&](auto& f, auto& v) { s.retrain_every = parse_count(f, v, 1); }},
        {"session.batch_size", [&](auto& f, auto& v) { s.batch_size = parse_count(f, v, 1); }},
        {"session.stop_after", [&](auto& f, auto& v) { s.stop_after = parse_count(f, v, 0); }},
        {"session.cold_start", [&](auto& f, auto& v) { s.cold_start = parse_field(f, [&] { return parse_cold_start(v); }); }},
        {"session.dense_scale", [&](auto& f, auto& v) { s.dense_scale = static_cast<float>(parse_real(f, v)); }},
        {"session.seed", [&](auto& f, auto& v) { s.seed = static_cast<std::uint64_t>(parse_count(f, v, 0)); }},

        {"rerank.enabled", [&](auto& f, auto& v) { rerank_enabled = parse_bool(f, v); }},
        {"rerank.k", [&](auto& f, auto& v) { rerank.k = parse_count(f, v, 1); }},
        {"rerank.fuse_sum", [&](auto& f, auto& v) { rerank.fuse_sum = parse_bool(f, v); }},
        {"rerank.normalization", [&](auto& f, auto& v) { rerank.normalization = parse_field(f, [&] { return parse_normalization(v); }); }},
        {"rerank.input", [&](auto& f, auto& v) { rerank.input = parse_field(f, [&] { return parse_input_format(v); }); }},
        {"rerank.scorer", [&](auto&, auto& v) {
             rerank.scorer = v.rfind("file:", 0) == 0 ? "file:" + resolve(base_dir, v.substr(5)).string() : v;
         }},
        {"rerank.timeout_ms", [&](auto& f, auto& v) { rerank.timeout = std::chrono::milliseconds(parse_count(f, v, 1)); }},
        {"rerank.stateful", [&](auto& f, auto& v) { rerank.stateful_scorer = parse_bool(f, v); }},
        {"rerank.query_tokens", [&](auto& f, auto& v) { rerank.budget.query_tokens = parse_count(f, v, 1); }},
        {"rerank.doc_tokens", [&](auto& f, auto& v) { rerank.budget.doc_tokens = parse_count(f, v, 1); }},

        {"run.out", [&](auto&, auto& v) { m.out_dir = resolve(base_dir, v); }},
        {"run.jobs", [&](auto& f, auto& v) { m.jobs = static_cast<unsigned>(parse_count(f, v, 1)); }},

        {"service.snapshot_every", [&](auto& f, auto& v) { m.snapshot_every = parse_count(f, v, 1); }},
    };

    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) {
            throw ConfigError(section, "keys must sit inside a [section]");
        }
        for (const auto& [key, value] : body) {
            const std::string field = section + "." + key;
            auto it = setters.find(field);
            if (it == setters.end()) {
                throw ConfigError(field, "unknown key");
            }
            const std::string v = trimmed(value.data());
            if (v.empty()) {
                continue;
            }
            it->second(field, v);
        }
    }
    if (rerank_enabled) {
        s.rerank = rerank;
    }
    return m;
}

RunManifest load_manifest(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    try {
        return parse_manifest(in, path.parent_path());
    } catch (const ParseError& e) {
        throw ParseError(path.string(), e.line(), std::string(e.what()).substr(std::string("manifest:").size()));
    }
}

void write_manifest(const RunManifest& m, std::ostream& out)
{
    const auto& s = m.session;
    out << "[data]\n";
    out << "corpus = " << m.corpus.string() << "\n";
    out << "corpus_format = " << to_string(m.corpus_format) << "\n";
    out << "topics = " << m.topics.string() << "\n";
    out << "qrels = " << m.qrels.string() << "\n";
    if (m.embeddings) {
        out << "embeddings = " << m.embeddings->string() << "\n";
    }
    if (m.query_embeddings) {
        out << "query_embeddings = " << m.query_embeddings->string() << "\n";
    }
    if (m.embedding_dim > 0) {
        out << "embedding_dim = " << m.embedding_dim << "\n";
    }
    if (m.cache_dir) {
        out << "cache_dir = " << m.cache_dir->string() << "\n";
    }
    out << "\n[features]\n";
    out << "weighting = " << to_string(s.feature_space.weighting) << "\n";
    out << "k1 = " << format_double(s.feature_space.k1) << "\n";
    out << "b = " << format_double(s.feature_space.b) << "\n";
    out << "normalize = " << (s.feature_space.normalized ? "true" : "false") << "\n";
    out << "\n[train]\n";
    out << "lambda = " << format_double(s.train.lambda) << "\n";
    out << "epochs = " << s.train.epochs << "\n";
    out << "mode = " << to_string(s.train.mode) << "\n";
    out << "\n[session]\n";
    out << "fusion = " << to_string(s.fusion) << "\n";
    out << "negatives = " << to_string(s.negative_sampling) << "\n";
    out << "bmi_negatives = " << s.bmi_negatives << "\n";
    out << "literal_min_balance = " << (s.literal_min_balance ? "true" : "false") << "\n";
    out << "retrain_every = " << s.retrain_every << "\n";
    out << "batch_size = " << s.batch_size << "\n";
    if (s.stop_after) {
        out << "stop_after = " << *s.stop_after << "\n";
    }
    out << "cold_start = " << to_string(s.cold_start) << "\n";
    out << "dense_scale = " << format_double(s.dense_scale) << "\n";
    out << "seed = " << s.seed << "\n";
    if (s.rerank) {
        const auto& r = *s.rerank;
        out << "\n[rerank]\n";
        out << "enabled = true\n";
        out << "k = " << r.k << "\n";
        out << "fuse_sum = " << (r.fuse_sum ? "true" : "false") << "\n";
        out << "normalization = " << to_string(r.normalization) << "\n";
        out << "input = " << to_string(r.input) << "\n";
        out << "scorer = " << r.scorer << "\n";
        out << "timeout_ms = " << r.timeout.count() << "\n";
        out << "stateful = " << (r.stateful_scorer ? "true" : "false") << "\n";
        out << "query_tokens = " << r.budget.query_tokens << "\n";
        out << "doc_tokens = " << r.budget.doc_tokens << "\n";
    }
    out << "\n[run]\n";
    out << "out = " << m.out_dir.string() << "\n";
    out << "jobs = " << m.jobs << "\n";
    out << "\n[service]\n";
    out << "snapshot_every = " << m.snapshot_every << "\n";
}

void write_manifest(const RunManifest& manifest, const fs::path& path)
{
    auto out = open_for_write(path);
    write_manifest(manifest, out);
}

}  // namespace calrecall
