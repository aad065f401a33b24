#include <doctest.h>

#include <thread>

#include <httplib.h>

#include "calrecall/eval.hpp"
#include "calrecall/service.hpp"
#include "support.hpp"

using namespace calrecall;
using nlohmann::json;
using test_support::TempDir;

namespace {

RunManifest small_manifest(const TempDir& dir)
{
    auto data = generate_synthetic(8, 600, 2, 8);
    write_corpus(data.corpus, dir / "corpus.tsv", CorpusFormat::tsv);
    write_topics(data.topics, dir / "topics.tsv");
    write_qrels(data.qrels, dir / "qrels.txt");
    RunManifest m;
    m.corpus = dir / "corpus.tsv";
    m.topics = dir / "topics.tsv";
    m.qrels = dir / "qrels.txt";
    m.snapshot_every = 4;
    return m;
}

json body(const ReviewService::Reply& r) { return json::parse(r.body); }

std::string create(ReviewService& svc, const std::string& topic = "t1")
{
    auto r = svc.create_session(json{{"topic_id", topic}}.dump());
    REQUIRE(r.status == 201);
    return body(r)["session_id"].get<std::string>();
}

std::string judge_next(ReviewService& svc, const std::string& id, bool relevant)
{
    auto doc = body(svc.next(id))["doc_id"].get<std::string>();
    auto r = svc.judge(id, json{{"doc_id", doc}, {"judgment", relevant ? "relevant" : "nonrelevant"}}.dump());
    REQUIRE(r.status == 200);
    return doc;
}

}  // namespace

TEST_CASE("health is 503 until the data is loaded")
{
    TempDir dir;
    ReviewService svc(dir / "data");
    CHECK(svc.health().status == 503);
    svc.load(small_manifest(dir));
    CHECK(svc.health().status == 200);
}

TEST_CASE("session creation")
{
    TempDir dir;
    ReviewService svc(dir / "data");
    svc.load(small_manifest(dir));
    auto a = create(svc);
    auto b = create(svc);
    CHECK(a != b);
    CHECK(svc.create_session(R"({"topic_id": "t99"})").status == 404);
    auto bad = svc.create_session(R"({"topic_id": "t1", "config": {"retrain_every": 0}})");
    CHECK(bad.status == 400);
    CHECK(body(bad)["field"] == "retrain_every");
    auto typo = svc.create_session(R"({"topic_id": "t1", "config": {"negatives": "lots"}})");
    CHECK(typo.status == 400);
    CHECK(body(typo)["field"] == "negatives");
    CHECK(svc.create_session("{").status == 400);
    CHECK(svc.get_session(a).status == 200);
    CHECK(svc.next("nope").status == 404);
}

TEST_CASE("next, judge and the 409 contract")
{
    TempDir dir;
    ReviewService svc(dir / "data");
    svc.load(small_manifest(dir));
    auto id = create(svc);
    auto first = svc.next(id);
    CHECK(first.status == 200);
    CHECK(body(first)["iteration"] == 1);
    CHECK(!body(first)["text"].get<std::string>().empty());
    CHECK(svc.next(id).body == first.body);

    const auto doc = body(first)["doc_id"].get<std::string>();
    CHECK(svc.judge(id, json{{"doc_id", "doc0000599"}, {"judgment", 1}}.dump()).status == 409);
    auto ok = svc.judge(id, json{{"doc_id", doc}, {"judgment", 1}}.dump());
    CHECK(ok.status == 200);
    CHECK(body(ok)["accepted"] == true);
    CHECK(body(ok)["next_iteration"] == 2);
    CHECK(svc.judge(id, json{{"doc_id", doc}, {"judgment", 0}}.dump()).status == 409);
    CHECK(body(svc.next(id))["doc_id"] != doc);
    CHECK(svc.judge(id, json{{"doc_id", doc}}.dump()).status == 400);
}

TEST_CASE("concurrent judgments on one session: one wins")
{
    TempDir dir;
    ReviewService svc(dir / "data");
    svc.load(small_manifest(dir));
    auto id = create(svc);
    auto doc = body(svc.next(id))["doc_id"].get<std::string>();
    int statuses[2] = {0, 0};
    std::thread t1([&] { statuses[0] = svc.judge(id, json{{"doc_id", doc}, {"judgment", 1}}.dump()).status; });
    std::thread t2([&] { statuses[1] = svc.judge(id, json{{"doc_id", doc}, {"judgment", 0}}.dump()).status; });
    t1.join();
    t2.join();
    CHECK(statuses[0] + statuses[1] == 200 + 409);
}

TEST_CASE("metrics and export agree with the eval module")
{
    TempDir dir;
    auto manifest = small_manifest(dir);
    ReviewService svc(dir / "data");
    svc.load(manifest);
    auto id = create(svc);
    CHECK(body(svc.metrics(id))["gain_curve"].empty());
    for (int i = 0; i < 6; ++i) {
        judge_next(svc, id, i % 2 == 0);
    }
    auto metrics = body(svc.metrics(id));
    CHECK(metrics["gain_curve"].size() == 6);
    CHECK(metrics["relevant_found"] == 3);

    auto exported = svc.export_log(id);
    CHECK(exported.status == 200);
    test_support::write_text(dir / "export.tsv", exported.body);
    auto log = load_runlog(dir / "export.tsv");
    CHECK(log.size() == 6);
    CHECK(svc.metrics(id).body == to_json(evaluate("t1", log, 8)).dump());
}

TEST_CASE("closed sessions stop offering but still export")
{
    TempDir dir;
    ReviewService svc(dir / "data");
    svc.load(small_manifest(dir));
    auto id = create(svc);
    judge_next(svc, id, true);
    CHECK(svc.close(id).status == 200);
    CHECK(svc.next(id).status == 409);
    CHECK(svc.export_log(id).status == 200);
}

TEST_CASE("a reloaded service resumes where the journal left off")
{
    TempDir dir;
    auto manifest = small_manifest(dir);
    std::string id;
    std::string next_doc;
    {
        ReviewService svc(dir / "data");
        svc.load(manifest);
        id = create(svc);
        // 10 judgments with snapshots every 4: resume replays a 2-judgment tail
        for (int i = 0; i < 10; ++i) {
            judge_next(svc, id, i % 3 == 0);
        }
        next_doc = body(svc.next(id))["doc_id"].get<std::string>();
    }
    // a torn write at the end of the journal was never acknowledged
    {
        std::ofstream out(dir / "data" / "sessions" / id / "journal.tsv", std::ios::app);
        out << "11\tdoc00";
    }
    ReviewService again(dir / "data");
    again.load(manifest);
    auto resumed = body(again.next(id));
    CHECK(resumed["doc_id"] == next_doc);
    CHECK(resumed["iteration"] == 11);
    judge_next(again, id, false);
    CHECK(load_runlog(dir / "data" / "sessions" / id / "journal.tsv").size() == 11);
}

TEST_CASE("http surface with a bearer token")
{
    TempDir dir;
    ReviewService svc(dir / "data", "s3cret");
    int port = svc.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread server([&] { svc.listen(); });
    httplib::Client client("127.0.0.1", port);

    auto health = client.Get("/healthz");
    REQUIRE(health);
    CHECK(health->status == 503);
    svc.load(small_manifest(dir));
    CHECK(client.Get("/healthz")->status == 200);

    CHECK(client.Post("/sessions", R"({"topic_id": "t1"})", "application/json")->status == 401);
    httplib::Headers auth{{"Authorization", "Bearer s3cret"}};
    auto created = client.Post("/sessions", auth, R"({"topic_id": "t1"})", "application/json");
    REQUIRE(created);
    CHECK(created->status == 201);
    auto id = json::parse(created->body)["session_id"].get<std::string>();
    auto next = client.Get("/sessions/" + id + "/next", auth);
    CHECK(next->status == 200);
    auto doc = json::parse(next->body)["doc_id"].get<std::string>();
    auto judged = client.Post("/sessions/" + id + "/judgments", auth, json{{"doc_id", doc}, {"relevant", true}}.dump(),
                              "application/json");
    CHECK(judged->status == 200);
    CHECK(client.Get("/sessions/" + id + "/metrics", auth)->status == 200);
    auto exported = client.Get("/sessions/" + id + "/export", auth);
    CHECK(exported->status == 200);
    CHECK(exported->body.find(doc) != std::string::npos);
    CHECK(client.Get("/sessions/zzz/next", auth)->status == 404);

    svc.stop();
    server.join();
}
