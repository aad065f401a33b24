#include "calrecall/ingestion.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "calrecall/error.hpp"
#include "calrecall/rng.hpp"
#include "calrecall/text_io.hpp"

namespace calrecall {

namespace {

bool is_word_byte(unsigned char c)
{
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

char fold(unsigned char c)
{
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c);
}

template <typename Fn>
void for_each_token(std::string_view text, Fn&& fn)
{
    std::string token;
    for (unsigned char c : text) {
        if (is_word_byte(c)) {
            token.push_back(fold(c));
        } else if (!token.empty()) {
            fn(token);
            token.clear();
        }
    }
    if (!token.empty()) {
        fn(token);
    }
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text)
{
    std::vector<std::string> tokens;
    for_each_token(text, [&](const std::string& t) { tokens.push_back(t); });
    return tokens;
}

Corpus Corpus::build(std::vector<std::pair<std::string, std::string>> docs)
{
    if (docs.empty()) {
        throw std::invalid_argument("empty corpus");
    }
    Corpus corpus;
    corpus.docs_.reserve(docs.size());
    corpus.doc_index_.reserve(docs.size());
    // per-term marker of the last document that counted it toward df
    std::vector<DocIndex> last_seen;

    for (auto& [id, text] : docs) {
        if (id.empty()) {
            throw std::invalid_argument("empty doc_id at position " + std::to_string(corpus.docs_.size() + 1));
        }
        auto index = static_cast<DocIndex>(corpus.docs_.size());
        if (!corpus.doc_index_.emplace(id, index).second) {
            throw std::invalid_argument("duplicate doc_id '" + id + "'");
        }
        Document doc{std::move(id), std::move(text), {}};
        for_each_token(doc.text, [&](const std::string& token) {
            auto [it, inserted] = corpus.term_index_.try_emplace(token, static_cast<TermId>(corpus.terms_.size()));
            if (inserted) {
                corpus.terms_.push_back(token);
                corpus.df_.push_back(0);
                last_seen.push_back(index);
                corpus.df_.back() = 1;
            } else if (last_seen[it->second] != index) {
                last_seen[it->second] = index;
                ++corpus.df_[it->second];
            }
            doc.tokens.push_back(it->second);
        });
        corpus.total_tokens_ += doc.tokens.size();
        corpus.docs_.push_back(std::move(doc));
    }
    corpus.avg_doc_len_ = static_cast<double>(corpus.total_tokens_) / static_cast<double>(corpus.docs_.size());
    return corpus;
}

std::optional<DocIndex> Corpus::find(std::string_view doc_id) const
{
    auto it = doc_index_.find(std::string(doc_id));
    if (it == doc_index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::optional<TermId> Corpus::term_id(std::string_view term) const
{
    auto it = term_index_.find(std::string(term));
    if (it == term_index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::vector<std::string> Corpus::tokens(DocIndex i) const
{
    std::vector<std::string> out;
    out.reserve(docs_[i].tokens.size());
    for (TermId t : docs_[i].tokens) {
        out.push_back(terms_[t]);
    }
    return out;
}

CorpusFormat parse_corpus_format(std::string_view name)
{
    if (name == "tsv") {
        return CorpusFormat::tsv;
    }
    if (name == "jsonl") {
        return CorpusFormat::jsonl;
    }
    throw ConfigError("format", "unknown corpus format '" + std::string(name) + "'");
}

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format)
{
    std::vector<std::pair<std::string, std::string>> docs;
    std::unordered_map<std::string, std::size_t> first_line;
    const std::string source = path.string();

    for_each_line(path, [&](std::string_view line, std::size_t number) {
        if (line.empty()) {
            return;
        }
        std::string id;
        std::string text;
        if (format == CorpusFormat::tsv) {
            auto tab = line.find('\t');
            if (tab == std::string_view::npos) {
                throw ParseError(source, number, "expected doc_id<TAB>text");
            }
            id = std::string(line.substr(0, tab));
            text = std::string(line.substr(tab + 1));
        } else {
            nlohmann::json obj;
            try {
                obj = nlohmann::json::parse(line);
            } catch (const nlohmann::json::parse_error& e) {
                throw ParseError(source, number, std::string("invalid JSON: ") + e.what());
            }
            if (!obj.is_object() || !obj.contains("id") || !obj.contains("text") || !obj["text"].is_string()) {
                throw ParseError(source, number, "expected {\"id\": ..., \"text\": ...}");
            }
            const auto& jid = obj["id"];
            if (jid.is_string()) {
                id = jid.get<std::string>();
            } else if (jid.is_number_integer()) {
                id = std::to_string(jid.get<long long>());
            } else {
                throw ParseError(source, number, "id must be a string or integer");
            }
            text = obj["text"].get<std::string>();
        }
        if (id.empty()) {
            throw ParseError(source, number, "empty doc_id");
        }
        auto [it, inserted] = first_line.emplace(id, number);
        if (!inserted) {
            throw ParseError(source, number,
                             "duplicate doc_id '" + id + "' (first seen on line " + std::to_string(it->second) + ")");
        }
        docs.emplace_back(std::move(id), std::move(text));
    });

    if (docs.empty()) {
        throw ParseError(source, 0, "empty corpus");
    }
    return Corpus::build(std::move(docs));
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path, CorpusFormat format)
{
    auto out = open_for_write(path);
    for (const auto& doc : corpus.docs()) {
        if (format == CorpusFormat::tsv) {
            out << doc.id << '\t' << doc.text << '\n';
        } else {
            nlohmann::json obj{{"id", doc.id}, {"text", doc.text}};
            out << obj.dump() << '\n';
        }
    }
}

std::vector<Topic> load_topics(const std::filesystem::path& path)
{
    std::vector<Topic> topics;
    const std::string source = path.string();
    for_each_line(path, [&](std::string_view line, std::size_t number) {
        if (line.empty()) {
            return;
        }
        auto tab = line.find('\t');
        if (tab == std::string_view::npos || tab == 0) {
            throw ParseError(source, number, "expected topic_id<TAB>query");
        }
        Topic topic{std::string(line.substr(0, tab)), std::string(line.substr(tab + 1))};
        if (topic.query.find_first_not_of(" \t") == std::string::npos) {
            throw ParseError(source, number, "empty query for topic '" + topic.id + "'");
        }
        for (const auto& t : topics) {
            if (t.id == topic.id) {
                throw ParseError(source, number, "duplicate topic '" + topic.id + "'");
            }
        }
        topics.push_back(std::move(topic));
    });
    return topics;
}

void write_topics(const std::vector<Topic>& topics, const std::filesystem::path& path)
{
    auto out = open_for_write(path);
    for (const auto& t : topics) {
        out << t.id << '\t' << t.query << '\n';
    }
}

void QrelsOracle::add(const std::string& topic_id, const std::string& doc_id, Judgment j)
{
    auto& per_topic = judgments_[topic_id];
    auto& count = r_t_[topic_id];
    auto [it, inserted] = per_topic.try_emplace(doc_id, j);
    if (!inserted) {
        if (it->second == Judgment::relevant) {
            --count;
        }
        it->second = j;
    }
    if (j == Judgment::relevant) {
        ++count;
    }
}

Judgment QrelsOracle::lookup(std::string_view topic_id, std::string_view doc_id) const
{
    auto topic = judgments_.find(topic_id);
    if (topic == judgments_.end()) {
        return Judgment::nonrelevant;
    }
    auto it = topic->second.find(doc_id);
    return it == topic->second.end() ? Judgment::nonrelevant : it->second;
}

bool QrelsOracle::has_topic(std::string_view topic_id) const
{
    return judgments_.find(topic_id) != judgments_.end();
}

std::size_t QrelsOracle::relevant_count(std::string_view topic_id) const
{
    auto it = r_t_.find(topic_id);
    return it == r_t_.end() ? 0 : it->second;
}

std::vector<std::string> QrelsOracle::topics() const
{
    std::vector<std::string> out;
    for (const auto& [t, _] : judgments_) {
        out.push_back(t);
    }
    return out;
}

QrelsOracle load_qrels(const std::filesystem::path& path)
{
    QrelsOracle qrels;
    const std::string source = path.string();
    for_each_line(path, [&](std::string_view line, std::size_t number) {
        auto fields = split_whitespace(line);
        if (fields.empty()) {
            return;
        }
        if (fields.size() != 4) {
            throw ParseError(source, number, "expected 'topic 0 doc_id rel', got " + std::to_string(fields.size()) +
                                                 " fields");
        }
        auto rel = parse_int(fields[3]);
        if (!rel) {
            throw ParseError(source, number, "relevance '" + std::string(fields[3]) + "' is not an integer");
        }
        qrels.add(std::string(fields[0]), std::string(fields[2]), *rel > 0 ? Judgment::relevant : Judgment::nonrelevant);
    });
    return qrels;
}

void write_qrels(const QrelsOracle& qrels, const std::filesystem::path& path)
{
    auto out = open_for_write(path);
    for (const auto& [topic, docs] : qrels.entries()) {
        for (const auto& [doc, j] : docs) {
            out << topic << " 0 " << doc << ' ' << (j == Judgment::relevant ? 1 : 0) << '\n';
        }
    }
}

namespace {

// Distinct letter-only pseudo-words, so they can never collide with the
// digit-bearing marker terms.
std::string background_word(std::size_t index)
{
    static constexpr std::string_view syllables[] = {"ka", "lo", "mi", "nu", "pe", "ra", "si", "to", "vu", "ze",
                                                     "ba", "de", "fi", "go", "hu", "ja", "ke", "li", "mo", "ny"};
    constexpr std::size_t base = std::size(syllables);
    std::string word;
    std::size_t n = index;
    do {
        word += syllables[n % base];
        n /= base;
    } while (n > 0);
    return word;
}

std::string marker_word(std::size_t topic, std::size_t marker)
{
    return "t" + std::to_string(topic + 1) + "m" + std::to_string(marker);
}

std::string synthetic_doc_id(std::size_t i)
{
    std::string digits = std::to_string(i);
    return "doc" + std::string(digits.size() < 7 ? 7 - digits.size() : 0, '0') + digits;
}

}  // namespace

SyntheticCollection generate_synthetic(std::uint64_t seed, std::size_t n_docs, std::size_t n_topics,
                                       std::size_t relevant_per_topic, const SyntheticOptions& options)
{
    if (relevant_per_topic > n_docs) {
        throw std::invalid_argument("relevant_per_topic exceeds n_docs");
    }
    if (options.background_vocab == 0 || options.min_doc_len > options.max_doc_len ||
        options.min_planted == 0 || options.min_planted > options.max_planted) {
        throw std::invalid_argument("inconsistent synthetic options");
    }
    Rng rng(seed);

    // Zipf(1) over the background vocabulary
    std::vector<double> cdf(options.background_vocab);
    double total = 0.0;
    for (std::size_t r = 0; r < cdf.size(); ++r) {
        total += 1.0 / static_cast<double>(r + 1);
        cdf[r] = total;
    }
    std::vector<std::string> words(options.background_vocab);
    for (std::size_t r = 0; r < words.size(); ++r) {
        words[r] = background_word(r);
    }

    // planted_topics[d] lists the topics for which document d is relevant
    std::vector<std::vector<std::size_t>> planted_topics(n_docs);
    std::vector<DocIndex> order(n_docs);
    for (std::size_t t = 0; t < n_topics; ++t) {
        std::iota(order.begin(), order.end(), DocIndex{0});
        for (std::size_t i = 0; i < relevant_per_topic; ++i) {
            std::size_t j = i + rng.below(n_docs - i);
            std::swap(order[i], order[j]);
            planted_topics[order[i]].push_back(t);
        }
    }

    const std::size_t markers = std::max<std::size_t>(options.markers_per_topic, 1);
    const std::size_t max_planted = std::min(options.max_planted, markers);
    const std::size_t min_planted = std::min(options.min_planted, max_planted);

    std::vector<std::pair<std::string, std::string>> docs;
    docs.reserve(n_docs);
    std::vector<std::string> tokens;
    std::vector<std::size_t> marker_order(markers);
    for (std::size_t d = 0; d < n_docs; ++d) {
        std::size_t len = options.min_doc_len + rng.below(options.max_doc_len - options.min_doc_len + 1);
        tokens.clear();
        for (std::size_t i = 0; i < len; ++i) {
            double u = rng.uniform() * total;
            auto r = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
            tokens.push_back(words[std::min(r, words.size() - 1)]);
        }
        for (std::size_t t : planted_topics[d]) {
            std::size_t count = min_planted + rng.below(max_planted - min_planted + 1);
            std::iota(marker_order.begin(), marker_order.end(), std::size_t{0});
            for (std::size_t i = 0; i < count; ++i) {
                std::size_t j = i + rng.below(markers - i);
                std::swap(marker_order[i], marker_order[j]);
                std::size_t at = rng.below(tokens.size() + 1);
                tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(at), marker_word(t, marker_order[i]));
            }
        }
        std::string text;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (i > 0) {
                text += ' ';
            }
            text += tokens[i];
        }
        docs.emplace_back(synthetic_doc_id(d), std::move(text));
    }

    SyntheticCollection out{Corpus::build(std::move(docs)), {}, {}};
    for (std::size_t t = 0; t < n_topics; ++t) {
        Topic topic{"t" + std::to_string(t + 1), {}};
        for (std::size_t m = 0; m < markers; ++m) {
            topic.query += (m == 0 ? "" : " ") + marker_word(t, m);
        }
        const std::string& topic_id = topic.id;
        for (std::size_t d = 0; d < n_docs; ++d) {
            const auto& p = planted_topics[d];
            if (std::find(p.begin(), p.end(), t) != p.end()) {
                out.qrels.add(topic_id, out.corpus.doc(static_cast<DocIndex>(d)).id, Judgment::relevant);
            }
        }
        out.topics.push_back(std::move(topic));
    }
    return out;
}

}  // namespace calrecall
