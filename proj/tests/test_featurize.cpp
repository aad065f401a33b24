#include <doctest.h>

#include <cmath>
#include <map>

#include "calrecall/error.hpp"
#include "calrecall/featurize.hpp"
#include "support.hpp"

using namespace calrecall;

namespace {

// term string -> weight for one row
std::map<std::string, double> by_term(const Corpus& c, const SparseVector& v, std::size_t offset = 0)
{
    std::map<std::string, double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v.indices[i] >= offset) {
            out[c.term(v.indices[i] - offset)] = v.weights[i];
        }
    }
    return out;
}

}  // namespace

TEST_CASE("dot and norm over sparse vectors")
{
    SparseVector a;
    a.push_back(1, 2.0);
    a.push_back(4, 1.0);
    a.push_back(9, -3.0);
    SparseVector b;
    b.push_back(0, 5.0);
    b.push_back(4, 2.0);
    b.push_back(9, 1.0);
    CHECK(dot(a.view(), b.view()) == doctest::Approx(2.0 - 3.0));
    CHECK(norm2(a.view()) == doctest::Approx(std::sqrt(14.0)));
    CHECK(dot(a.view(), SparseVector{}.view()) == 0.0);
}

TEST_CASE("log tf-idf weights against hand computation")
{
    auto c = test_support::tiny_corpus();
    FeatureSpace space;
    space.normalized = false;
    auto w = by_term(c, featurize_doc(c, space, 0));
    // d1 = apple banana apple; apple df 3, banana df 3, N = 6
    CHECK(w.size() == 2);
    CHECK(w["apple"] == doctest::Approx((1.0 + std::log(2.0)) * std::log(2.0)));
    CHECK(w["banana"] == doctest::Approx(std::log(2.0)));
}

TEST_CASE("bm25 weights against hand computation")
{
    auto c = test_support::tiny_corpus();
    FeatureSpace space;
    space.weighting = Weighting::bm25;
    space.normalized = false;
    space.k1 = 1.2;
    space.b = 0.75;
    auto w = by_term(c, featurize_doc(c, space, 4));
    // d5 = grape x3; df 1, N 6, len 3, avgdl 17/6
    const double idf = std::log((6.0 - 1.0 + 0.5) / (1.0 + 0.5) + 1.0);
    const double norm = 1.0 - 0.75 + 0.75 * 3.0 / (17.0 / 6.0);
    CHECK(w["grape"] == doctest::Approx(idf * 3.0 * 2.2 / (3.0 + 1.2 * norm)));
}

TEST_CASE("normalized rows have unit length")
{
    auto c = test_support::tiny_corpus();
    for (auto weighting : {Weighting::tfidf_log, Weighting::bm25, Weighting::both}) {
        FeatureSpace space;
        space.weighting = weighting;
        auto m = featurize_corpus(c, space);
        for (DocIndex d = 0; d < c.size(); ++d) {
            CHECK(norm2(m.row(d)) == doctest::Approx(1.0));
        }
    }
}

TEST_CASE("both places bm25 after the tf-idf block")
{
    auto c = test_support::tiny_corpus();
    FeatureSpace space;
    space.weighting = Weighting::both;
    CHECK(space.dimension(c) == 2 * c.vocab_size());
    auto v = featurize_doc(c, space, 4);
    REQUIRE(v.size() == 2);
    CHECK(v.indices[0] < c.vocab_size());
    CHECK(v.indices[1] >= c.vocab_size());
    CHECK(v.indices[1] - c.vocab_size() == v.indices[0]);
}

TEST_CASE("query features drop unknown terms")
{
    auto c = test_support::tiny_corpus();
    FeatureSpace space;
    auto q = featurize_query(c, space, "Grape kiwi");
    REQUIRE(q.size() == 1);
    CHECK(q.indices[0] == *c.term_id("grape"));
    CHECK(featurize_query(c, space, "kiwi mango").empty());
}

TEST_CASE("parallel featurization equals serial")
{
    auto s = generate_synthetic(3, 300, 2, 10);
    FeatureSpace space;
    CHECK(featurize_corpus(s.corpus, space, 1) == featurize_corpus(s.corpus, space, 3));
}

TEST_CASE("feature cache round trip is exact")
{
    test_support::TempDir dir;
    auto s = generate_synthetic(5, 200, 1, 10);
    FeatureSpace space;
    space.weighting = Weighting::bm25;
    auto m = featurize_corpus(s.corpus, space);
    write_feature_cache(s.corpus, m, dir / "f.tsv");
    CHECK(read_feature_cache(s.corpus, dir / "f.tsv") == m);

    auto other = Corpus::build({{"zz", "apple"}});
    CHECK_THROWS_AS(read_feature_cache(other, dir / "f.tsv"), ParseError);
}

TEST_CASE("feature space validation")
{
    CHECK_THROWS_AS(parse_weighting("lsi"), ConfigError);
    FeatureSpace space;
    space.k1 = 0.0;
    CHECK_THROWS_AS(space.validate(), ConfigError);
    space.k1 = 1.0;
    space.b = 1.5;
    CHECK_THROWS_AS(space.validate(), ConfigError);
}
