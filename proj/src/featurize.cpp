#include "calrecall/featurize.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

#include "calrecall/error.hpp"
#include "calrecall/text_io.hpp"

namespace calrecall {

double dot(SparseView a, SparseView b)
{
    double sum = 0.0;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < a.size() && j < b.size()) {
        if (a.indices[i] < b.indices[j]) {
            ++i;
        } else if (b.indices[j] < a.indices[i]) {
            ++j;
        } else {
            sum += a.weights[i] * b.weights[j];
            ++i;
            ++j;
        }
    }
    return sum;
}

double norm2(SparseView v)
{
    double sum = 0.0;
    for (double w : v.weights) {
        sum += w * w;
    }
    return std::sqrt(sum);
}

Weighting parse_weighting(std::string_view name)
{
    if (name == "tfidf" || name == "tfidf_log") {
        return Weighting::tfidf_log;
    }
    if (name == "bm25") {
        return Weighting::bm25;
    }
    if (name == "both" || name == "concat") {
        return Weighting::both;
    }
    throw ConfigError("weighting", "expected tfidf, bm25 or both, got '" + std::string(name) + "'");
}

std::string_view to_string(Weighting w)
{
    switch (w) {
        case Weighting::tfidf_log:
            return "tfidf";
        case Weighting::bm25:
            return "bm25";
        case Weighting::both:
            return "both";
    }
    return "?";
}

void FeatureSpace::validate() const
{
    if (!(k1 > 0.0)) {
        throw ConfigError("k1", "must be > 0");
    }
    if (!(b >= 0.0 && b <= 1.0)) {
        throw ConfigError("b", "must lie in [0, 1]");
    }
}

std::size_t FeatureSpace::dimension(const Corpus& corpus) const
{
    return weighting == Weighting::both ? 2 * corpus.vocab_size() : corpus.vocab_size();
}

SparseVector featurize_terms(const Corpus& corpus, const FeatureSpace& space, std::span<const TermId> terms,
                             std::size_t length)
{
    std::vector<TermId> sorted(terms.begin(), terms.end());
    std::sort(sorted.begin(), sorted.end());

    const double n_docs = static_cast<double>(corpus.size());
    const double len_ratio = static_cast<double>(length) / corpus.avg_doc_len();
    const auto vocab = static_cast<std::uint32_t>(corpus.vocab_size());

    SparseVector tfidf;
    SparseVector bm25;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) {
            ++j;
        }
        const TermId term = sorted[i];
        const double tf = static_cast<double>(j - i);
        const double df = corpus.df(term);
        i = j;

        if (space.weighting != Weighting::bm25) {
            double w = (1.0 + std::log(tf)) * std::log(n_docs / df);
            if (w != 0.0) {
                tfidf.push_back(term, w);
            }
        }
        if (space.weighting != Weighting::tfidf_log) {
            double idf = std::log((n_docs - df + 0.5) / (df + 0.5) + 1.0);
            double w = idf * tf * (space.k1 + 1.0) / (tf + space.k1 * (1.0 - space.b + space.b * len_ratio));
            if (w != 0.0) {
                bm25.push_back(space.weighting == Weighting::both ? term + vocab : term, w);
            }
        }
    }

    SparseVector out;
    if (space.weighting == Weighting::tfidf_log) {
        out = std::move(tfidf);
    } else if (space.weighting == Weighting::bm25) {
        out = std::move(bm25);
    } else {
        out = std::move(tfidf);
        out.indices.insert(out.indices.end(), bm25.indices.begin(), bm25.indices.end());
        out.weights.insert(out.weights.end(), bm25.weights.begin(), bm25.weights.end());
    }

    if (space.normalized) {
        double norm = norm2(out.view());
        if (norm > 0.0) {
            for (double& w : out.weights) {
                w /= norm;
            }
        }
    }
    return out;
}

SparseVector featurize_doc(const Corpus& corpus, const FeatureSpace& space, DocIndex doc)
{
    const auto& tokens = corpus.doc(doc).tokens;
    return featurize_terms(corpus, space, tokens, tokens.size());
}

SparseVector featurize_query(const Corpus& corpus, const FeatureSpace& space, std::string_view query)
{
    auto tokens = tokenize(query);
    std::vector<TermId> known;
    for (const auto& t : tokens) {
        if (auto id = corpus.term_id(t)) {
            known.push_back(*id);
        }
    }
    return featurize_terms(corpus, space, known, tokens.size());
}

void FeatureMatrix::append(SparseView v)
{
    indices_.insert(indices_.end(), v.indices.begin(), v.indices.end());
    weights_.insert(weights_.end(), v.weights.begin(), v.weights.end());
    offsets_.push_back(indices_.size());
}

FeatureMatrix featurize_corpus(const Corpus& corpus, const FeatureSpace& space, unsigned threads)
{
    space.validate();
    const std::size_t n = corpus.size();
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
    FeatureMatrix matrix;
    if (threads == 1) {
        for (std::size_t d = 0; d < n; ++d) {
            matrix.append(featurize_doc(corpus, space, static_cast<DocIndex>(d)).view());
        }
        return matrix;
    }

    std::vector<std::vector<SparseVector>> parts(threads);
    std::vector<std::thread> workers;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned w = 0; w < threads; ++w) {
        workers.emplace_back([&, w] {
            std::size_t begin = w * chunk;
            std::size_t end = std::min(n, begin + chunk);
            for (std::size_t d = begin; d < end; ++d) {
                parts[w].push_back(featurize_doc(corpus, space, static_cast<DocIndex>(d)));
            }
        });
    }
    for (auto& t : workers) {
        t.join();
    }
    for (const auto& part : parts) {
        for (const auto& v : part) {
            matrix.append(v.view());
        }
    }
    return matrix;
}

void write_feature_cache(const Corpus& corpus, const FeatureMatrix& features, const std::filesystem::path& path)
{
    auto out = open_for_write(path);
    for (std::size_t d = 0; d < features.rows(); ++d) {
        auto row = features.row(static_cast<DocIndex>(d));
        out << corpus.doc(static_cast<DocIndex>(d)).id << '\t';
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i > 0) {
                out << ',';
            }
            out << row.indices[i] << ':' << format_double(row.weights[i]);
        }
        out << '\n';
    }
}

FeatureMatrix read_feature_cache(const Corpus& corpus, const std::filesystem::path& path)
{
    FeatureMatrix matrix;
    const std::string source = path.string();
    SparseVector row;
    for_each_line(path, [&](std::string_view line, std::size_t number) {
        auto tab = line.find('\t');
        if (tab == std::string_view::npos) {
            throw ParseError(source, number, "expected doc_id<TAB>features");
        }
        const std::size_t d = matrix.rows();
        if (d >= corpus.size() || line.substr(0, tab) != corpus.doc(static_cast<DocIndex>(d)).id) {
            throw ParseError(source, number, "feature cache does not match corpus order");
        }
        row.indices.clear();
        row.weights.clear();
        auto body = line.substr(tab + 1);
        if (!body.empty()) {
            for (auto pair : split(body, ',')) {
                auto colon = pair.find(':');
                auto index = colon == std::string_view::npos ? std::nullopt : parse_int(pair.substr(0, colon));
                auto weight = colon == std::string_view::npos ? std::nullopt : parse_double(pair.substr(colon + 1));
                if (!index || !weight || *index < 0 || (!row.empty() && *index <= row.indices.back())) {
                    throw ParseError(source, number, "bad feature '" + std::string(pair) + "'");
                }
                row.push_back(static_cast<std::uint32_t>(*index), *weight);
            }
        }
        matrix.append(row.view());
    });
    if (matrix.rows() != corpus.size()) {
        throw ParseError(source, matrix.rows(), "feature cache has fewer rows than the corpus");
    }
    return matrix;
}

}  // namespace calrecall
