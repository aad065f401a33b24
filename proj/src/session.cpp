#include "calrecall/session.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "calrecall/error.hpp"

namespace calrecall {

NegativeSampling parse_negative_sampling(std::string_view name)
{
    if (name == "bmi" || name == "bmi_fixed") {
        return NegativeSampling::bmi_fixed;
    }
    if (name == "balanced") {
        return NegativeSampling::balanced;
    }
    throw ConfigError("negatives", "expected bmi or balanced, got '" + std::string(name) + "'");
}

ColdStart parse_cold_start(std::string_view name)
{
    if (name == "none") {
        return ColdStart::none;
    }
    if (name == "static_rank") {
        return ColdStart::static_rank;
    }
    throw ConfigError("cold_start", "expected none or static_rank, got '" + std::string(name) + "'");
}

void SessionConfig::validate() const
{
    feature_space.validate();
    train.validate();
    if (batch_size < 1) {
        throw ConfigError("batch_size", "must be >= 1");
    }
    if (retrain_every < 1) {
        throw ConfigError("retrain_every", "must be >= 1");
    }
    if (!std::isfinite(dense_scale)) {
        throw ConfigError("dense_scale", "must be finite");
    }
    if (rerank) {
        rerank->validate();
    }
}

FeatureIndex::FeatureIndex(const Corpus& corpus, const FeatureSpace& space, Fusion fusion,
                           const EmbeddingStore* doc_embeddings, float dense_scale, unsigned threads)
    : FeatureIndex(corpus, space, fusion, featurize_corpus(corpus, space, threads), doc_embeddings, dense_scale)
{}

FeatureIndex::FeatureIndex(const Corpus& corpus, const FeatureSpace& space, Fusion fusion, FeatureMatrix sparse,
                           const EmbeddingStore* doc_embeddings, float dense_scale)
    : corpus_(&corpus),
      space_(space),
      fusion_(fusion),
      dense_scale_(dense_scale),
      sparse_(std::make_unique<FeatureMatrix>(std::move(sparse)))
{
    space_.validate();
    if (sparse_->rows() != corpus.size()) {
        throw std::invalid_argument("feature rows do not match the corpus");
    }
    fused_ = std::make_unique<FusedFeatures>(*sparse_, corpus, doc_embeddings, fusion, space_.dimension(corpus),
                                             dense_scale);
}

FeatureVector FeatureIndex::query_features(const Topic& topic, const EmbeddingStore* query_embeddings) const
{
    auto sparse = featurize_query(*corpus_, space_, topic.query);
    const DenseVector* dense = query_embeddings != nullptr ? query_embeddings->find(topic.id) : nullptr;
    if (requires_dense(fusion_) && dense != nullptr && dense->size() != fused_->dense_dim()) {
        throw std::invalid_argument("query embedding for topic '" + topic.id + "' has the wrong dimension");
    }
    return fuse(sparse, dense, fusion_, space_.dimension(*corpus_), "topic " + topic.id, dense_scale_);
}

nlohmann::json to_json(const SessionSnapshot& snapshot)
{
    auto model_text = [](const Model& m) {
        std::ostringstream out;
        write_model(m, out);
        return out.str();
    };
    nlohmann::json pending = nlohmann::json::array();
    for (const auto& c : snapshot.pending) {
        pending.push_back({{"doc_id", c.doc_id}, {"first_stage", c.first_stage_score}, {"final", c.final_score}});
    }
    nlohmann::json j{{"iteration", snapshot.iteration},
                     {"rng", snapshot.rng_state},
                     {"model", model_text(snapshot.model)},
                     {"pending", std::move(pending)},
                     {"judgments_since_retrain", snapshot.judgments_since_retrain}};
    if (snapshot.dense_model) {
        j["dense_model"] = model_text(*snapshot.dense_model);
    }
    return j;
}

SessionSnapshot snapshot_from_json(const nlohmann::json& j)
{
    auto model_from = [](const std::string& text) {
        std::istringstream in(text);
        return read_model(in, "snapshot");
    };
    SessionSnapshot s;
    s.iteration = j.at("iteration").get<std::size_t>();
    s.rng_state = j.at("rng").get<std::string>();
    s.model = model_from(j.at("model").get<std::string>());
    if (j.contains("dense_model")) {
        s.dense_model = model_from(j["dense_model"].get<std::string>());
    }
    for (const auto& p : j.at("pending")) {
        Candidate c;
        c.doc_id = p.at("doc_id").get<std::string>();
        c.first_stage_score = p.at("first_stage").get<double>();
        c.final_score = p.at("final").get<double>();
        s.pending.push_back(std::move(c));
    }
    s.judgments_since_retrain = j.value("judgments_since_retrain", std::size_t{0});
    return s;
}

Session::Session(Topic topic, const FeatureIndex& index, const EmbeddingStore* query_embeddings, SessionConfig config,
                 std::shared_ptr<Scorer> scorer)
    : topic_(std::move(topic)), index_(&index), config_(std::move(config)), scorer_(std::move(scorer)),
      rng_(config_.seed)
{
    config_.validate();
    if (config_.fusion != index.fusion()) {
        throw ConfigError("fusion", "session uses " + std::string(to_string(config_.fusion)) +
                                        " but the feature index was built for " + std::string(to_string(index.fusion())));
    }
    if (!(config_.feature_space == index.space()) || config_.dense_scale != index.dense_scale()) {
        throw ConfigError("features", "session feature space differs from the feature index");
    }
    if (config_.rerank && !scorer_) {
        throw ConfigError("scorer", "reranking is configured but no scorer was supplied");
    }
    seed_ = index.query_features(topic_, query_embeddings);
    if (config_.fusion == Fusion::e4_dual) {
        dense_model_ = Model();
    }
    const std::size_t n = index.corpus().size();
    judged_.assign(n, std::nullopt);
    unjudged_ = n;
    retrain();
}

std::size_t Session::pseudo_negative_count() const
{
    std::size_t wanted = 0;
    if (config_.negative_sampling == NegativeSampling::bmi_fixed) {
        wanted = config_.bmi_negatives;
    } else {
        const auto p = static_cast<long long>(positives_);
        const auto n = static_cast<long long>(negatives_);
        const long long balance = config_.literal_min_balance ? std::min(p - n, 0LL) : std::max(p - n, 0LL);
        wanted = balance > 0 ? static_cast<std::size_t>(balance) : 0;
    }
    return std::min(wanted, unjudged_);
}

std::vector<LabeledExample> Session::assemble_training_set()
{
    const auto& corpus = index_->corpus();
    const auto& features = index_->features();
    std::vector<LabeledExample> examples;
    examples.reserve(1 + log_.size() + config_.bmi_negatives);
    examples.push_back({seed_.ref(), true, Provenance::synthetic_seed});
    for (const auto& entry : log_) {
        DocIndex doc = *corpus.find(entry.doc_id);
        examples.push_back({features.row(doc), entry.judgment == Judgment::relevant, Provenance::human_judgment});
    }

    const std::size_t count = pseudo_negative_count();
    if (count > 0) {
        std::vector<DocIndex> pool;
        pool.reserve(unjudged_);
        for (std::size_t d = 0; d < judged_.size(); ++d) {
            if (!judged_[d]) {
                pool.push_back(static_cast<DocIndex>(d));
            }
        }
        for (std::size_t i = 0; i < count; ++i) {
            std::size_t j = i + rng_.below(pool.size() - i);
            std::swap(pool[i], pool[j]);
            examples.push_back({features.row(pool[i]), false, Provenance::pseudo_negative});
        }
    }
    return examples;
}

void Session::retrain()
{
    auto examples = assemble_training_set();
    if (config_.fusion == Fusion::e4_dual) {
        std::vector<LabeledExample> sparse_examples;
        std::vector<LabeledExample> dense_examples;
        for (const auto& ex : examples) {
            sparse_examples.push_back({sparse_part(ex.features), ex.positive, ex.provenance});
            dense_examples.push_back({dense_part(ex.features), ex.positive, ex.provenance});
        }
        model_ = train(sparse_examples, config_.train, &model_, rng_);
        dense_model_ = train(dense_examples, config_.train, &*dense_model_, rng_);
    } else {
        model_ = train(examples, config_.train, &model_, rng_);
    }
    judgments_since_retrain_ = 0;
}

double Session::first_stage_score(DocIndex doc, bool static_rank) const
{
    if (static_rank) {
        return dot(seed_.sparse.view(), index_->sparse().row(doc));
    }
    const FeatureRef x = index_->features().row(doc);
    if (config_.fusion == Fusion::e4_dual) {
        return score_dual(model_, *dense_model_, x);
    }
    // log-odds: same order as the probability, without saturating
    return model_.margin(x);
}

std::vector<Candidate> Session::rank_unjudged(std::size_t count) const
{
    const auto& corpus = index_->corpus();
    const bool static_rank = config_.cold_start == ColdStart::static_rank && positives_ == 0;
    std::vector<std::pair<double, DocIndex>> scored;
    scored.reserve(unjudged_);
    for (std::size_t d = 0; d < judged_.size(); ++d) {
        if (!judged_[d]) {
            auto doc = static_cast<DocIndex>(d);
            scored.emplace_back(first_stage_score(doc, static_rank), doc);
        }
    }
    auto better = [&](const std::pair<double, DocIndex>& a, const std::pair<double, DocIndex>& b) {
        if (a.first != b.first) {
            return a.first > b.first;
        }
        return corpus.doc(a.second).id < corpus.doc(b.second).id;
    };
    count = std::min(count, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(count), scored.end(), better);

    std::vector<Candidate> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto [score, doc] = scored[i];
        out.push_back({doc, corpus.doc(doc).id, score, score});
    }
    return out;
}

CandidateBatch Session::next_candidates()
{
    if (!pending_.empty()) {
        return {pending_, false};
    }
    if (unjudged_ == 0) {
        return {{}, true};
    }
    std::size_t depth = config_.batch_size;
    if (config_.rerank) {
        depth = std::max(depth, config_.rerank->k);
    }
    auto ranked = rank_unjudged(depth);

    if (config_.rerank) {
        const auto& policy = *config_.rerank;
        const auto& corpus = index_->corpus();
        const std::size_t k = std::min(policy.k, ranked.size());
        RerankRequest request;
        request.topic_id = topic_.id;
        request.query = topic_.query;
        request.iteration = iteration() + 1;
        for (std::size_t i = 0; i < k; ++i) {
            const auto& text = corpus.doc(ranked[i].doc).text;
            request.candidates.push_back(
                {ranked[i].doc_id, policy.input == InputFormat::monobert
                                       ? build_monobert_input(topic_.query, text, policy.budget)
                                       : build_monot5_input(topic_.query, text, policy.budget)});
        }
        for (const auto& entry : log_) {
            request.history.push_back({entry.doc_id, entry.judgment});
        }
        auto response = scorer_->score(request);
        validate_response(request, response);

        std::vector<ScoredDoc> first_stage;
        std::unordered_map<std::string_view, const Candidate*> by_id;
        for (const auto& c : ranked) {
            first_stage.push_back({c.doc_id, c.first_stage_score});
            by_id.emplace(c.doc_id, &c);
        }
        auto reordered = apply_rerank(first_stage, policy, response);
        std::vector<Candidate> fused;
        fused.reserve(reordered.size());
        for (const auto& s : reordered) {
            Candidate c = *by_id.at(s.doc_id);
            c.final_score = s.score;
            fused.push_back(std::move(c));
        }
        ranked = std::move(fused);
    }

    ranked.resize(std::min(ranked.size(), config_.batch_size));
    pending_ = std::move(ranked);
    return {pending_, false};
}

void Session::apply_log_entry(const RunLogEntry& entry)
{
    auto doc = index_->corpus().find(entry.doc_id);
    if (!doc) {
        throw JudgmentError("unknown document '" + entry.doc_id + "'");
    }
    if (judged_[*doc]) {
        throw JudgmentError("document '" + entry.doc_id + "' is already judged");
    }
    RunLogEntry logged = entry;
    logged.iteration = log_.size() + 1;
    log_.push_back(std::move(logged));
    judged_[*doc] = entry.judgment;
    --unjudged_;
    if (entry.judgment == Judgment::relevant) {
        ++positives_;
    } else {
        ++negatives_;
    }
}

void Session::record_judgment(std::string_view doc_id, Judgment judgment)
{
    auto doc = index_->corpus().find(doc_id);
    if (!doc) {
        throw JudgmentError("unknown document '" + std::string(doc_id) + "'");
    }
    if (judged_[*doc]) {
        throw JudgmentError("document '" + std::string(doc_id) + "' is already judged");
    }
    auto it = std::find_if(pending_.begin(), pending_.end(), [&](const Candidate& c) { return c.doc == *doc; });
    if (it == pending_.end()) {
        throw JudgmentError("document '" + std::string(doc_id) + "' was not offered");
    }
    apply_log_entry({0, it->doc_id, it->first_stage_score, it->final_score, judgment});
    pending_.erase(it);
    ++judgments_since_retrain_;
    if (iteration() % config_.retrain_every == 0) {
        retrain();
    }
}

void Session::set_model(Model model, std::optional<Model> dense_model)
{
    model_ = std::move(model);
    if (config_.fusion == Fusion::e4_dual) {
        dense_model_ = dense_model ? std::move(*dense_model) : Model();
    }
    pending_.clear();
}

SessionSnapshot Session::snapshot() const
{
    return {iteration(), rng_.state(), model_, dense_model_, pending_, judgments_since_retrain_};
}

void Session::restore(const SessionSnapshot& snapshot, const RunLog& log)
{
    if (log.size() < snapshot.iteration) {
        throw std::invalid_argument("restore: log is shorter than the snapshot");
    }
    log_.clear();
    judged_.assign(index_->corpus().size(), std::nullopt);
    unjudged_ = judged_.size();
    positives_ = 0;
    negatives_ = 0;
    for (std::size_t i = 0; i < snapshot.iteration; ++i) {
        apply_log_entry(log[i]);
    }
    rng_.restore(snapshot.rng_state);
    model_ = snapshot.model;
    dense_model_ = snapshot.dense_model;
    if (config_.fusion == Fusion::e4_dual && !dense_model_) {
        throw std::invalid_argument("restore: snapshot lacks the dense model");
    }
    pending_.clear();
    for (const auto& c : snapshot.pending) {
        auto doc = index_->corpus().find(c.doc_id);
        if (!doc || judged_[*doc]) {
            throw std::invalid_argument("restore: pending document '" + c.doc_id + "' is unknown or judged");
        }
        Candidate restored = c;
        restored.doc = *doc;
        pending_.push_back(std::move(restored));
    }
    judgments_since_retrain_ = snapshot.judgments_since_retrain;
}

RunLog run_simulation(const Topic& topic, const FeatureIndex& index, const EmbeddingStore* query_embeddings,
                      const QrelsOracle& oracle, const SessionConfig& config, std::shared_ptr<Scorer> scorer)
{
    Session session(topic, index, query_embeddings, config, std::move(scorer));
    const std::size_t limit = config.stop_after.value_or(std::numeric_limits<std::size_t>::max());
    while (session.iteration() < limit) {
        auto batch = session.next_candidates();
        if (batch.exhausted) {
            break;
        }
        for (const auto& c : batch.items) {
            if (session.iteration() >= limit) {
                break;
            }
            session.record_judgment(c.doc_id, oracle.lookup(topic.id, c.doc_id));
        }
    }
    return session.log();
}

}  // namespace calrecall
