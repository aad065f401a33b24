#include "calrecall/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include <httplib.h>

#include "calrecall/error.hpp"
#include "calrecall/text_io.hpp"

namespace calrecall {

namespace {

bool is_space(char c)
{
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::string context(const RerankRequest& request)
{
    return "topic " + request.topic_id + ", iteration " + std::to_string(request.iteration);
}

std::vector<double> normalized(const std::vector<double>& xs, ScoreNormalization mode)
{
    if (mode == ScoreNormalization::none || xs.empty()) {
        return xs;
    }
    auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
    const double min = *lo;
    const double range = *hi - *lo;
    std::vector<double> out(xs.size(), 0.0);
    if (range > 0.0) {
        for (std::size_t i = 0; i < xs.size(); ++i) {
            out[i] = (xs[i] - min) / range;
        }
    }
    return out;
}

}  // namespace

std::string truncate_tokens(std::string_view text, std::size_t limit)
{
    std::string out;
    std::size_t taken = 0;
    std::size_t i = 0;
    while (i < text.size() && taken < limit) {
        while (i < text.size() && is_space(text[i])) {
            ++i;
        }
        std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) {
            ++i;
        }
        if (i > start) {
            if (taken > 0) {
                out += ' ';
            }
            out.append(text.substr(start, i - start));
            ++taken;
        }
    }
    return out;
}

std::string build_monobert_input(std::string_view query, std::string_view doc_text, const TruncationBudget& budget)
{
    return "[CLS] " + truncate_tokens(query, budget.query_tokens) + " [SEP] " +
           truncate_tokens(doc_text, budget.doc_tokens) + " [SEP]";
}

std::string build_monot5_input(std::string_view query, std::string_view doc_text, const TruncationBudget& budget)
{
    return "Query: " + truncate_tokens(query, budget.query_tokens) + " Document: " +
           truncate_tokens(doc_text, budget.doc_tokens) + " Relevant: ";
}

InputFormat parse_input_format(std::string_view name)
{
    if (name == "monobert") {
        return InputFormat::monobert;
    }
    if (name == "monot5") {
        return InputFormat::monot5;
    }
    throw ConfigError("input", "expected monobert or monot5, got '" + std::string(name) + "'");
}

ScoreNormalization parse_normalization(std::string_view name)
{
    if (name == "none") {
        return ScoreNormalization::none;
    }
    if (name == "minmax" || name == "minmax_within_k") {
        return ScoreNormalization::minmax_within_k;
    }
    throw ConfigError("normalization", "expected none or minmax, got '" + std::string(name) + "'");
}

void RerankPolicy::validate() const
{
    if (k < 1) {
        throw ConfigError("k", "must be >= 1");
    }
    if (timeout.count() <= 0) {
        throw ConfigError("timeout_ms", "must be > 0");
    }
}

nlohmann::json to_json(const RerankRequest& request)
{
    nlohmann::json candidates = nlohmann::json::array();
    for (const auto& c : request.candidates) {
        candidates.push_back({{"doc_id", c.doc_id}, {"input", c.input}});
    }
    nlohmann::json history = nlohmann::json::array();
    for (const auto& h : request.history) {
        history.push_back({{"doc_id", h.doc_id}, {"label", h.label == Judgment::relevant ? 1 : 0}});
    }
    return {{"topic_id", request.topic_id},
            {"query", request.query},
            {"iteration", request.iteration},
            {"candidates", std::move(candidates)},
            {"history", std::move(history)}};
}

RerankResponse parse_rerank_response(const nlohmann::json& body, const RerankRequest& request)
{
    RerankResponse response;
    if (!body.is_object() || !body.contains("scores") || !body["scores"].is_array()) {
        throw ScorerError(ScorerError::Kind::malformed, "scorer response lacks a scores array (" + context(request) + ")");
    }
    for (const auto& item : body["scores"]) {
        if (!item.is_object() || !item.contains("doc_id") || !item["doc_id"].is_string() || !item.contains("score") ||
            !item["score"].is_number()) {
            throw ScorerError(ScorerError::Kind::malformed,
                              "scorer response item is not {doc_id, score} (" + context(request) + ")");
        }
        response.scores.push_back({item["doc_id"].get<std::string>(), item["score"].get<double>()});
    }
    return response;
}

void validate_response(const RerankRequest& request, const RerankResponse& response)
{
    std::unordered_map<std::string_view, double> by_id;
    for (const auto& s : response.scores) {
        if (!std::isfinite(s.score)) {
            throw ScorerError(ScorerError::Kind::malformed,
                              "non-finite score for '" + s.doc_id + "' (" + context(request) + ")");
        }
        by_id.emplace(s.doc_id, s.score);
    }
    for (const auto& c : request.candidates) {
        if (by_id.find(c.doc_id) == by_id.end()) {
            throw ScorerError(ScorerError::Kind::coverage,
                              "scorer returned no score for '" + c.doc_id + "' (" + context(request) + ")");
        }
    }
}

std::vector<ScoredDoc> apply_rerank(const std::vector<ScoredDoc>& first_stage, const RerankPolicy& policy,
                                    const RerankResponse& response)
{
    const std::size_t k = std::min(std::max<std::size_t>(policy.k, 1), first_stage.size());
    std::unordered_map<std::string_view, double> rerank_scores;
    for (const auto& s : response.scores) {
        rerank_scores.emplace(s.doc_id, s.score);
    }

    std::vector<double> first(k);
    std::vector<double> second(k);
    for (std::size_t i = 0; i < k; ++i) {
        auto it = rerank_scores.find(first_stage[i].doc_id);
        if (it == rerank_scores.end()) {
            throw ScorerError(ScorerError::Kind::coverage, "no rerank score for '" + first_stage[i].doc_id + "'");
        }
        first[i] = first_stage[i].score;
        second[i] = it->second;
    }

    std::vector<double> key(k);
    if (policy.fuse_sum) {
        auto a = normalized(first, policy.normalization);
        auto b = normalized(second, policy.normalization);
        for (std::size_t i = 0; i < k; ++i) {
            key[i] = a[i] + b[i];
        }
    } else {
        key = second;
    }

    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return key[x] > key[y]; });

    std::vector<ScoredDoc> out;
    out.reserve(first_stage.size());
    for (std::size_t i : order) {
        out.push_back({first_stage[i].doc_id, key[i]});
    }
    out.insert(out.end(), first_stage.begin() + static_cast<std::ptrdiff_t>(k), first_stage.end());
    return out;
}

HttpScorer::HttpScorer(std::string url, std::chrono::milliseconds timeout) : timeout_(timeout)
{
    const std::string_view scheme = "http://";
    if (url.rfind(scheme, 0) != 0) {
        throw ConfigError("scorer", "only http:// endpoints are supported, got '" + url + "'");
    }
    auto slash = url.find('/', scheme.size());
    origin_ = url.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : url.substr(slash);
}

RerankResponse HttpScorer::score(const RerankRequest& request)
{
    const std::string body = to_json(request).dump();
    httplib::Client client(origin_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    std::string last_error;
    bool timed_out = false;
    for (int attempt = 0; attempt < 2; ++attempt) {
        const auto start = std::chrono::steady_clock::now();
        auto res = client.Post(path_, body, "application/json");
        const auto elapsed = std::chrono::steady_clock::now() - start;
        if (!res) {
            const auto err = res.error();
            timed_out = err == httplib::Error::ConnectionTimeout ||
                        (err == httplib::Error::Read && elapsed >= timeout_ * 9 / 10);
            last_error = httplib::to_string(err);
            continue;
        }
        if (res->status != 200) {
            timed_out = false;
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        nlohmann::json parsed;
        try {
            parsed = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception&) {
            throw ScorerError(ScorerError::Kind::malformed, "scorer returned invalid JSON (" + context(request) + ")");
        }
        auto response = parse_rerank_response(parsed, request);
        validate_response(request, response);
        return response;
    }
    if (timed_out) {
        throw ScorerError(ScorerError::Kind::timeout, "scorer " + origin_ + path_ + " timed out after " +
                                                          std::to_string(timeout_.count()) + " ms (" +
                                                          context(request) + ")");
    }
    throw ScorerError(ScorerError::Kind::transport,
                      "scorer " + origin_ + path_ + " failed: " + last_error + " (" + context(request) + ")");
}

OfflineScorer::OfflineScorer(const std::filesystem::path& path)
{
    const std::string source = path.string();
    for_each_line(path, [&](std::string_view line, std::size_t number) {
        if (line.empty()) {
            return;
        }
        auto fields = split(line, '\t');
        if (fields.size() != 4) {
            throw ParseError(source, number, "expected topic_id<TAB>iteration<TAB>doc_id<TAB>score");
        }
        std::size_t iteration = 0;
        if (fields[1] != "*") {
            auto it = parse_int(fields[1]);
            if (!it || *it < 1) {
                throw ParseError(source, number, "bad iteration '" + std::string(fields[1]) + "'");
            }
            iteration = static_cast<std::size_t>(*it);
        }
        auto score = parse_double(fields[3]);
        if (!score || !std::isfinite(*score)) {
            throw ParseError(source, number, "bad score '" + std::string(fields[3]) + "'");
        }
        scores_[{std::string(fields[0]), iteration, std::string(fields[2])}] = *score;
    });
}

RerankResponse OfflineScorer::score(const RerankRequest& request)
{
    RerankResponse response;
    for (const auto& c : request.candidates) {
        auto it = scores_.find(std::make_tuple(request.topic_id, request.iteration, c.doc_id));
        if (it == scores_.end()) {
            it = scores_.find(std::make_tuple(request.topic_id, std::size_t{0}, c.doc_id));
        }
        if (it == scores_.end()) {
            throw ScorerError(ScorerError::Kind::coverage,
                              "scores file has no entry for '" + c.doc_id + "' (" + context(request) + ")");
        }
        response.scores.push_back({c.doc_id, it->second});
    }
    return response;
}

CachingScorer::CachingScorer(std::shared_ptr<Scorer> inner, bool stateful)
    : inner_(std::move(inner)), stateful_(stateful)
{}

RerankResponse CachingScorer::score(const RerankRequest& request)
{
    const std::size_t version = stateful_ ? request.history.size() : 0;
    RerankRequest missing = request;
    missing.candidates.clear();
    {
        std::lock_guard lock(mutex_);
        for (const auto& c : request.candidates) {
            if (cache_.find({request.topic_id, c.doc_id, version}) == cache_.end()) {
                missing.candidates.push_back(c);
            } else {
                ++hits_;
            }
        }
    }
    // the scorer call runs unlocked so other sessions are not held up
    if (!missing.candidates.empty()) {
        auto fresh = inner_->score(missing);
        validate_response(missing, fresh);
        std::lock_guard lock(mutex_);
        for (const auto& s : fresh.scores) {
            cache_[{request.topic_id, s.doc_id, version}] = s.score;
        }
    }
    RerankResponse response;
    std::lock_guard lock(mutex_);
    for (const auto& c : request.candidates) {
        response.scores.push_back({c.doc_id, cache_.at({request.topic_id, c.doc_id, version})});
    }
    return response;
}

std::shared_ptr<Scorer> make_scorer(const RerankPolicy& policy)
{
    if (policy.scorer.rfind("file:", 0) == 0) {
        return std::make_shared<OfflineScorer>(policy.scorer.substr(5));
    }
    if (policy.scorer.rfind("http://", 0) == 0) {
        return std::make_shared<CachingScorer>(std::make_shared<HttpScorer>(policy.scorer, policy.timeout),
                                               policy.stateful_scorer);
    }
    throw ConfigError("scorer", "expected http://... or file:..., got '" + policy.scorer + "'");
}

}  // namespace calrecall
