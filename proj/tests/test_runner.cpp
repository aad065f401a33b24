#include <doctest.h>

#include <cstdlib>

#include "calrecall/runner.hpp"
#include "support.hpp"

using namespace calrecall;
using test_support::read_text;
using test_support::TempDir;
using test_support::write_text;

namespace {

RunManifest small_run(const TempDir& dir, std::size_t topics = 2)
{
    auto data = generate_synthetic(21, 1500, topics, 10);
    write_corpus(data.corpus, dir / "corpus.tsv", CorpusFormat::tsv);
    write_topics(data.topics, dir / "topics.tsv");
    write_qrels(data.qrels, dir / "qrels.txt");
    RunManifest m;
    m.corpus = dir / "corpus.tsv";
    m.topics = dir / "topics.tsv";
    m.qrels = dir / "qrels.txt";
    m.out_dir = dir / "out";
    m.session.stop_after = 60;
    return m;
}

int run_cli(const std::string& args, const TempDir& dir)
{
    std::string cmd = std::string(CALRECALL_BIN) + " " + args + " >" + (dir / "stdout.txt").string() + " 2>" +
                      (dir / "stderr.txt").string();
    int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("cmd_run writes the per-topic layout and a summary")
{
    TempDir dir;
    auto m = small_run(dir);
    auto reports = cmd_run(m);
    REQUIRE(reports.size() == 2);
    for (const char* topic : {"t1", "t2"}) {
        CHECK(std::filesystem::exists(dir / "out" / topic / "runlog.tsv"));
        CHECK(std::filesystem::exists(dir / "out" / topic / "report.json"));
        CHECK(std::filesystem::exists(dir / "out" / topic / "gain.csv"));
        CHECK(load_runlog(dir / "out" / topic / "runlog.tsv").size() <= 60);
    }
    CHECK(std::filesystem::exists(dir / "out" / "summary.json"));
    CHECK(reports[0].topic_id == "t1");
}

TEST_CASE("cmd_run is repeatable, serial or parallel")
{
    TempDir dir;
    auto m = small_run(dir, 3);
    cmd_run(m);
    auto second = m;
    second.out_dir = dir / "again";
    second.jobs = 3;
    cmd_run(second);
    for (const char* topic : {"t1", "t2", "t3"}) {
        CHECK(read_text(dir / "out" / topic / "runlog.tsv") == read_text(dir / "again" / topic / "runlog.tsv"));
    }
    CHECK(read_text(dir / "out" / "summary.json") == read_text(dir / "again" / "summary.json"));
}

TEST_CASE("cmd_eval recomputes the live reports byte for byte")
{
    TempDir dir;
    auto m = small_run(dir);
    cmd_run(m);
    cmd_eval(dir / "out", m.qrels, dir / "eval");
    for (const char* topic : {"t1", "t2"}) {
        CHECK(read_text(dir / "out" / topic / "report.json") == read_text(dir / "eval" / topic / "report.json"));
        CHECK(read_text(dir / "out" / topic / "gain.csv") == read_text(dir / "eval" / topic / "gain.csv"));
    }
    write_text(dir / "q1.txt", "t1 0 doc0000001 1\n");
    CHECK_THROWS_WITH(cmd_eval(dir / "out", dir / "q1.txt"), doctest::Contains("'t2'"));
}

TEST_CASE("cmd_run refuses topics without qrels")
{
    TempDir dir;
    auto m = small_run(dir);
    write_text(dir / "topics.tsv", "t1\tt1m0\nt77\tt1m1\n");
    CHECK_THROWS_WITH(cmd_run(m), doctest::Contains("'t77'"));
}

TEST_CASE("feature cache hit gives identical stats")
{
    TempDir dir;
    auto m = small_run(dir);
    FeatureSpace space;
    bool hit = true;
    auto first = cmd_ingest(m.corpus, CorpusFormat::tsv, space, dir / "cache", 1, &hit);
    CHECK_FALSE(hit);
    auto second = cmd_ingest(m.corpus, CorpusFormat::tsv, space, dir / "cache", 1, &hit);
    CHECK(hit);
    CHECK(format_stats(first) == format_stats(second));
    space.weighting = Weighting::bm25;
    cmd_ingest(m.corpus, CorpusFormat::tsv, space, dir / "cache", 1, &hit);
    CHECK_FALSE(hit);
}

TEST_CASE("cli: exit status and error prefix")
{
    TempDir dir;
    CHECK(run_cli("synth --out " + (dir / "syn").string() + " --docs 800 --topics 2 --relevant 5", dir) == 0);
    CHECK(run_cli("run " + (dir / "syn" / "manifest.ini").string() + " --stop-after 30 --seed 3", dir) == 0);
    CHECK(load_runlog(dir / "syn" / "out" / "t1" / "runlog.tsv").size() == 30);

    CHECK(run_cli("ingest --corpus " + (dir / "nope.tsv").string(), dir) == 1);
    auto err = read_text(dir / "stderr.txt");
    CHECK(err.rfind("error: ", 0) == 0);
    CHECK(err.find("nope.tsv") != std::string::npos);

    CHECK(run_cli("run " + (dir / "syn" / "manifest.ini").string() + " --fusion e2", dir) == 1);
    CHECK(read_text(dir / "stderr.txt").rfind("error: config: data.embeddings", 0) == 0);

    CHECK(run_cli("frobnicate", dir) == 2);
    CHECK(read_text(dir / "stderr.txt").rfind("error: usage", 0) == 0);

    CHECK(run_cli("ingest --corpus " + (dir / "syn" / "corpus.tsv").string(), dir) == 0);
    CHECK(read_text(dir / "stdout.txt").rfind("documents=800 ", 0) == 0);
}

TEST_CASE("cli: compare and eval on the percentage fixture")
{
    TempDir dir;
    const std::string table = std::string(CALRECALL_FIXTURES) + "/percent_table.tsv";
    CHECK(run_cli("eval --table " + table, dir) == 0);
    auto means = nlohmann::json::parse(read_text(dir / "stdout.txt"));
    CHECK(means["mean_percent"]["cal"].get<double>() == doctest::Approx(96.50).epsilon(1e-4));
    CHECK(run_cli("compare --table " + table, dir) == 0);
    auto cmp = nlohmann::json::parse(read_text(dir / "stdout.txt"));
    CHECK(cmp["metrics"]["recall_at_4r_1000"]["p_value"].get<double>() > 0.05);
}

TEST_CASE("cli: emb-convert round trip")
{
    TempDir dir;
    write_text(dir / "e.tsv", "a\t0.5,1.5\nb\t-2,3.25\n");
    CHECK(run_cli("emb-convert " + (dir / "e.tsv").string() + " " + (dir / "e.bin").string() + " --to binary", dir) ==
          0);
    CHECK(run_cli("emb-convert " + (dir / "e.bin").string() + " " + (dir / "back.tsv").string() + " --to tsv", dir) ==
          0);
    auto back = load_embeddings(dir / "back.tsv", 2);
    CHECK(*back.find("b") == DenseVector{-2.0F, 3.25F});
}
