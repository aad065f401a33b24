#include <algorithm>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>

#include "calrecall/classifier.hpp"
#include "calrecall/eval.hpp"
#include "calrecall/manifest.hpp"
#include "calrecall/rerank.hpp"
#include "calrecall/runner.hpp"
#include "calrecall/service.hpp"
#include "calrecall/session.hpp"
#include "calrecall/stats.hpp"
#include "support.hpp"

using namespace calrecall;
using nlohmann::json;
using test_support::read_text;
using test_support::TempDir;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double x, int precision = 3)
{
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(precision);
    out << x;
    return out.str();
}

std::vector<std::string> shown(const RunLog& log)
{
    std::vector<std::string> ids;
    for (const auto& e : log) {
        ids.push_back(e.doc_id);
    }
    return ids;
}

Outcome metric_oracle()
{
    auto start = Clock::now();
    Rng rng(2024);
    std::size_t mismatches = 0;
    std::size_t checks = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t len = rng.below(2001);
        const double density = rng.uniform();
        std::vector<bool> rel(len);
        std::size_t total = 0;
        for (std::size_t i = 0; i < len; ++i) {
            rel[i] = rng.uniform() < density;
            total += rel[i];
        }
        auto log = test_support::make_log(rel);
        const std::size_t r_t = total + rng.below(50);

        auto count_first = [&](std::size_t n) {
            std::size_t c = 0;
            for (std::size_t i = 0; i < n && i < len; ++i) {
                if (rel[i]) {
                    ++c;
                }
            }
            return c;
        };
        auto oracle_recall = [&](std::size_t n) {
            return r_t == 0 ? 1.0 : static_cast<double>(count_first(n)) / static_cast<double>(r_t);
        };

        std::vector<std::size_t> cutoffs{1, 5, 10, 20, 100, 500, 1000, 2000, 2500};
        cutoffs.push_back(1 + rng.below(2100));
        if (len > 0) {
            cutoffs.push_back(len);
        }
        for (auto n : cutoffs) {
            const double p = static_cast<double>(count_first(n)) / static_cast<double>(n);
            mismatches += precision_at(log, n) != p;
            mismatches += recall_at(log, n, r_t) != oracle_recall(n);
            checks += 2;
        }
        mismatches += recall_at_4r_1000(log, r_t) != oracle_recall(4 * r_t + 1000);
        ++checks;
    }
    const double elapsed = seconds_since(start);
    return {mismatches == 0 && elapsed < 10.0, std::to_string(checks) + " comparisons, " + std::to_string(mismatches) +
                                                   " mismatches, " + fmt(elapsed) + " s"};
}

Outcome table_fixture()
{
    auto table = load_percent_table(std::string(CALRECALL_FIXTURES) + "/percent_table.tsv");
    auto cal = reports_from_table(table, 0);
    auto rerank = reports_from_table(table, 1);
    const double mean_cal = aggregate(cal).recall_at_4r_1000 * 100.0;
    const double mean_rerank = aggregate(rerank).recall_at_4r_1000 * 100.0;
    auto test = paired_t_test(table.values[0], table.values[1]);
    const bool ok = table.topics.size() == 34 && std::abs(mean_cal - 96.50) <= 0.01 &&
                    std::abs(mean_rerank - 96.77) <= 0.01 && test.p_value > 0.05;
    return {ok, "means " + fmt(mean_cal, 4) + " / " + fmt(mean_rerank, 4) + ", t = " + fmt(test.t_statistic, 4) +
                    ", p = " + fmt(test.p_value, 4)};
}

Outcome synthetic_total_recall()
{
    auto start = Clock::now();
    auto data = generate_synthetic(1, 20000, 4, 50);
    FeatureSpace space;
    FeatureIndex index(data.corpus, space, Fusion::e1_sparse_only);
    SessionConfig config;
    config.stop_after = 4 * 50 + 1000;
    bool ok = true;
    std::string detail = "recall";
    for (const auto& topic : data.topics) {
        auto log = run_simulation(topic, index, nullptr, data.qrels, config);
        const double r = recall_at_4r_1000(log, data.qrels.relevant_count(topic.id));
        ok = ok && r == 1.0;
        detail += " " + topic.id + "=" + fmt(r);
    }
    const double elapsed = seconds_since(start);
    return {ok && elapsed < 120.0, detail + ", " + fmt(elapsed, 1) + " s"};
}

Outcome run_determinism()
{
    TempDir dir;
    auto data = generate_synthetic(9, 5000, 3, 20);
    write_corpus(data.corpus, dir / "corpus.tsv", CorpusFormat::tsv);
    write_topics(data.topics, dir / "topics.tsv");
    write_qrels(data.qrels, dir / "qrels.txt");
    RunManifest m;
    m.corpus = dir / "corpus.tsv";
    m.topics = dir / "topics.tsv";
    m.qrels = dir / "qrels.txt";
    m.session.stop_after = 300;
    m.session.seed = 17;
    m.out_dir = dir / "a";
    cmd_run(m);
    m.out_dir = dir / "b";
    cmd_run(m);
    m.out_dir = dir / "c";
    m.jobs = 3;
    cmd_run(m);
    bool ok = true;
    for (const auto& t : data.topics) {
        auto a = read_text(dir / "a" / t.id / "runlog.tsv");
        ok = ok && !a.empty() && a == read_text(dir / "b" / t.id / "runlog.tsv") &&
             a == read_text(dir / "c" / t.id / "runlog.tsv");
    }
    return {ok, std::to_string(data.topics.size()) + " topics, three runs (jobs 1, 1, 3)"};
}

Outcome gradient_check()
{
    Rng rng(5);
    const double h = 1e-6;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t dim = 4 + rng.below(12);
        Model m(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            m.set_weight(i, 2.0 * rng.uniform() - 1.0);
        }
        m.set_bias(rng.uniform() - 0.5);
        SparseVector s;
        const std::size_t sparse_dim = dim - 3;
        for (std::size_t i = 0; i < sparse_dim; ++i) {
            if (rng.uniform() < 0.6) {
                s.push_back(static_cast<std::uint32_t>(i), 2.0 * rng.uniform() - 1.0);
            }
        }
        std::vector<float> dense(3);
        for (auto& x : dense) {
            x = static_cast<float>(rng.uniform() - 0.5);
        }
        LabeledExample ex{FeatureRef{s.view(), dense, static_cast<std::uint32_t>(sparse_dim)}, rng.below(2) == 1};
        const double lambda = 0.001 + 0.1 * rng.uniform();
        auto g = loss_and_gradient(m, ex, lambda);

        auto relative = [](double a, double b) {
            const double scale = std::max({std::abs(a), std::abs(b), 1e-12});
            return std::abs(a - b) / scale;
        };
        for (std::size_t i = 0; i < dim; ++i) {
            Model plus = m;
            Model minus = m;
            plus.set_weight(i, m.weight(i) + h);
            minus.set_weight(i, m.weight(i) - h);
            const double numeric =
                (loss_and_gradient(plus, ex, lambda).loss - loss_and_gradient(minus, ex, lambda).loss) / (2 * h);
            double analytic = 0.0;
            for (std::size_t k = 0; k < g.weights.size(); ++k) {
                if (g.weights.indices[k] == i) {
                    analytic = g.weights.weights[k];
                }
            }
            worst = std::max(worst, relative(analytic, numeric));
        }
        Model plus = m;
        Model minus = m;
        plus.set_bias(m.bias() + h);
        minus.set_bias(m.bias() - h);
        const double numeric =
            (loss_and_gradient(plus, ex, lambda).loss - loss_and_gradient(minus, ex, lambda).loss) / (2 * h);
        worst = std::max(worst, relative(g.bias, numeric));
    }
    std::ostringstream worst_text;
    worst_text << std::scientific << worst;
    return {worst <= 1e-5, "worst relative error " + worst_text.str() + " over 100 cases"};
}

EmbeddingStore store_for(const SyntheticCollection& data, std::size_t dim, bool zeros)
{
    EmbeddingStore store(dim);
    Rng rng(123);
    auto add = [&](const std::string& id) {
        DenseVector v(dim, 0.0F);
        if (!zeros) {
            for (auto& x : v) {
                x = static_cast<float>(rng.uniform() - 0.5);
            }
        }
        store.insert(id, std::move(v));
    };
    for (const auto& d : data.corpus.docs()) {
        add(d.id);
    }
    for (const auto& t : data.topics) {
        add(t.id);
    }
    return store;
}

Outcome e1_invariance()
{
    auto data = generate_synthetic(3, 3000, 3, 15);
    auto random_store = store_for(data, 16, false);
    auto zero_store = store_for(data, 16, true);
    FeatureSpace space;
    SessionConfig config;
    config.stop_after = 200;
    FeatureIndex plain(data.corpus, space, Fusion::e1_sparse_only);
    FeatureIndex attached(data.corpus, space, Fusion::e1_sparse_only, &random_store);
    FeatureIndex zeros(data.corpus, space, Fusion::e3_concat, &zero_store);
    auto e3 = config;
    e3.fusion = Fusion::e3_concat;
    bool ok = true;
    for (const auto& topic : data.topics) {
        auto base = shown(run_simulation(topic, plain, nullptr, data.qrels, config));
        ok = ok && base == shown(run_simulation(topic, attached, &random_store, data.qrels, config));
        ok = ok && base == shown(run_simulation(topic, zeros, &zero_store, data.qrels, e3));
    }
    return {ok, std::to_string(data.topics.size()) + " topics, 200 iterations each"};
}

std::string words(const char* prefix, int n)
{
    std::string out;
    for (int i = 1; i <= n; ++i) {
        out += (i > 1 ? " " : "") + std::string(prefix) + std::to_string(i);
    }
    return out;
}

Outcome rerank_contracts()
{
    Rng rng(11);
    std::size_t order_failures = 0;
    std::size_t set_failures = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.below(200);
        std::vector<ScoredDoc> first;
        double s = 10.0;
        for (std::size_t i = 0; i < n; ++i) {
            // occasional ties
            if (rng.uniform() < 0.8) {
                s -= rng.uniform();
            }
            first.push_back({"doc" + std::to_string(rng.next()), s});
        }
        RerankPolicy policy;
        policy.k = 1 + rng.below(60);
        const std::size_t k = std::min(policy.k, n);

        RerankResponse identity;
        RerankResponse random;
        for (std::size_t i = 0; i < k; ++i) {
            identity.scores.push_back(first[i]);
            random.scores.push_back({first[i].doc_id, rng.uniform()});
        }
        order_failures += apply_rerank(first, policy, identity) != first;

        for (bool fuse : {false, true}) {
            policy.fuse_sum = fuse;
            auto out = apply_rerank(first, policy, random);
            std::multiset<std::string> before;
            std::multiset<std::string> after;
            for (std::size_t i = 0; i < k; ++i) {
                before.insert(first[i].doc_id);
                after.insert(out[i].doc_id);
            }
            bool tail_same = out.size() == first.size() && std::equal(first.begin() + k, first.end(), out.begin() + k);
            set_failures += before != after || !tail_same;
        }
    }

    struct Case {
        int n;
        std::string query;
        std::string doc;
    };
    std::vector<Case> cases{{1, "cat", "dog"},
                            {2, "cat", ""},
                            {3, "", "dog"},
                            {4, words("q", 70), words("w", 500)},
                            {5, "  What is\tthe\n capital? ", "Paris  is\r\nthe capital."}};
    const std::string dir = std::string(CALRECALL_FIXTURES) + "/rerank/";
    std::size_t golden_failures = 0;
    for (const auto& c : cases) {
        golden_failures +=
            build_monobert_input(c.query, c.doc) != read_text(dir + "monobert_" + std::to_string(c.n) + ".golden");
        golden_failures +=
            build_monot5_input(c.query, c.doc) != read_text(dir + "monot5_" + std::to_string(c.n) + ".golden");
    }
    const bool ok = order_failures == 0 && set_failures == 0 && golden_failures == 0;
    return {ok, "order " + std::to_string(order_failures) + "/100, top-k set " + std::to_string(set_failures) +
                    "/200, golden " + std::to_string(golden_failures) + "/10 failures"};
}

Outcome balanced_rule()
{
    auto data = generate_synthetic(4, 200, 1, 5);
    FeatureSpace space;
    FeatureIndex index(data.corpus, space, Fusion::e1_sparse_only);
    std::unordered_map<const std::uint32_t*, DocIndex> row_of;
    for (DocIndex i = 0; i < data.corpus.size(); ++i) {
        row_of[index.features().row(i).sparse.indices.data()] = i;
    }
    SessionConfig config;
    config.negative_sampling = NegativeSampling::balanced;
    config.retrain_every = 1000;
    std::size_t failures = 0;
    for (std::size_t p = 0; p <= 20; ++p) {
        for (std::size_t n = 0; n <= 20; ++n) {
            config.seed = p * 21 + n;
            Session session(data.topics[0], index, nullptr, config);
            for (std::size_t i = 0; i < p + n; ++i) {
                session.record_judgment(session.next_candidates().items[0].doc_id,
                                        i < p ? Judgment::relevant : Judgment::nonrelevant);
            }
            auto set = session.assemble_training_set();
            std::size_t pseudo = 0;
            std::size_t human = 0;
            bool judged_drawn = false;
            for (const auto& ex : set) {
                if (ex.provenance == Provenance::pseudo_negative) {
                    ++pseudo;
                    auto it = row_of.find(ex.features.sparse.indices.data());
                    judged_drawn = judged_drawn || it == row_of.end() || session.judgment(it->second).has_value() ||
                                   ex.positive;
                } else if (ex.provenance == Provenance::human_judgment) {
                    ++human;
                }
            }
            const std::size_t expected = p > n ? p - n : 0;
            failures += pseudo != expected || human != p + n || judged_drawn;
        }
    }
    return {failures == 0, "441 (p, n) pairs, " + std::to_string(failures) + " failures"};
}

Outcome performance()
{
    SyntheticOptions options;
    options.min_doc_len = 50;
    options.max_doc_len = 150;
    auto data = generate_synthetic(6, 300000, 1, 50, options);
    FeatureSpace space;
    FeatureIndex index(data.corpus, space, Fusion::e1_sparse_only);
    const double avg_len = data.corpus.avg_doc_len();

    SessionConfig config;
    Session session(data.topics[0], index, nullptr, config);
    // the first ranking after a retrain scores every unjudged document
    session.record_judgment(session.next_candidates().items[0].doc_id, Judgment::relevant);
    auto start = Clock::now();
    auto batch = session.next_candidates();
    const double score_time = seconds_since(start);

    start = Clock::now();
    config.stop_after = 100;
    config.retrain_every = 1;
    auto log = run_simulation(data.topics[0], index, nullptr, data.qrels, config);
    const double session_time = seconds_since(start);

    const bool ok = !batch.items.empty() && log.size() == 100 && score_time <= 2.0 && session_time <= 240.0;
    return {ok, "300000 docs (avg " + fmt(avg_len, 1) + " tokens): one scoring pass " + fmt(score_time) +
                    " s, 100-iteration session " + fmt(session_time, 1) + " s"};
}

/// A `calrecall serve` child whose stdout is read until it reports ready.
struct ServeProcess {
    pid_t pid = -1;
    int port = 0;

    ServeProcess(const std::string& manifest, const std::string& data_dir)
    {
        int fds[2];
        if (pipe(fds) != 0) {
            throw std::runtime_error("pipe failed");
        }
        pid = fork();
        if (pid == 0) {
            dup2(fds[1], STDOUT_FILENO);
            close(fds[0]);
            close(fds[1]);
            setenv("BIND_ADDR", "127.0.0.1:0", 1);
            setenv("DATA_DIR", data_dir.c_str(), 1);
            unsetenv("AUTH_TOKEN");
            execl(CALRECALL_BIN, CALRECALL_BIN, "serve", manifest.c_str(), static_cast<char*>(nullptr));
            _exit(127);
        }
        close(fds[1]);
        FILE* out = fdopen(fds[0], "r");
        char line[512];
        bool ready = false;
        while (std::fgets(line, sizeof line, out) != nullptr) {
            std::string s(line);
            if (s.rfind("listening on ", 0) == 0) {
                port = std::stoi(s.substr(s.rfind(':') + 1));
            } else if (s.rfind("ready", 0) == 0) {
                ready = true;
                break;
            }
        }
        std::fclose(out);
        if (!ready || port == 0) {
            kill_now();
            throw std::runtime_error("serve did not become ready");
        }
    }
    ~ServeProcess() { kill_now(); }

    void kill_now()
    {
        if (pid > 0) {
            kill(pid, SIGKILL);
            waitpid(pid, nullptr, 0);
            pid = -1;
        }
    }
};

Outcome service_durability()
{
    TempDir dir;
    auto data = generate_synthetic(12, 3000, 1, 30);
    write_corpus(data.corpus, dir / "corpus.tsv", CorpusFormat::tsv);
    write_topics(data.topics, dir / "topics.tsv");
    write_qrels(data.qrels, dir / "qrels.txt");
    RunManifest m;
    m.corpus = dir / "corpus.tsv";
    m.topics = dir / "topics.tsv";
    m.qrels = dir / "qrels.txt";
    // resume must replay a journal tail past the last snapshot
    m.snapshot_every = 16;
    m.session.seed = 31;
    write_manifest(m, dir / "manifest.ini");
    const std::string topic = data.topics[0].id;
    const json create_body{{"topic_id", topic}};

    std::string id;
    {
        ServeProcess server((dir / "manifest.ini").string(), (dir / "data").string());
        httplib::Client client("127.0.0.1", server.port);
        auto created = client.Post("/sessions", create_body.dump(), "application/json");
        if (!created || created->status != 201) {
            return {false, "session creation failed"};
        }
        id = json::parse(created->body)["session_id"].get<std::string>();
        for (int i = 0; i < 50; ++i) {
            auto next = client.Get("/sessions/" + id + "/next");
            auto doc = json::parse(next->body)["doc_id"].get<std::string>();
            const bool rel = data.qrels.lookup(topic, doc) == Judgment::relevant;
            auto judged = client.Post("/sessions/" + id + "/judgments", json{{"doc_id", doc}, {"relevant", rel}}.dump(),
                                      "application/json");
            if (!judged || judged->status != 200) {
                return {false, "judgment " + std::to_string(i + 1) + " rejected"};
            }
        }
        server.kill_now();
    }

    ServeProcess restarted((dir / "manifest.ini").string(), (dir / "data").string());
    httplib::Client client("127.0.0.1", restarted.port);
    auto resumed = client.Get("/sessions/" + id + "/next");
    if (!resumed || resumed->status != 200) {
        return {false, "resumed session not served"};
    }
    auto after = json::parse(resumed->body);

    ReviewService reference(dir / "reference");
    reference.load(m);
    auto ref_id = json::parse(reference.create_session(create_body.dump()).body)["session_id"].get<std::string>();
    for (int i = 0; i < 50; ++i) {
        auto doc = json::parse(reference.next(ref_id).body)["doc_id"].get<std::string>();
        const bool rel = data.qrels.lookup(topic, doc) == Judgment::relevant;
        reference.judge(ref_id, json{{"doc_id", doc}, {"relevant", rel}}.dump());
    }
    auto expected = json::parse(reference.next(ref_id).body);

    auto journal = load_runlog(dir / "data" / "sessions" / id / "journal.tsv");
    const bool ok = journal.size() == 50 && after["iteration"] == 51 && after["doc_id"] == expected["doc_id"] &&
                    after["score"] == expected["score"];
    return {ok, "after SIGKILL at 50 judgments: resumed " + after["doc_id"].get<std::string>() + ", uninterrupted " +
                    expected["doc_id"].get<std::string>()};
}

}  // namespace

int main()
{
    std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"metric oracle equivalence", metric_oracle},
        {"percent table aggregate and paired t-test", table_fixture},
        {"synthetic end-to-end total recall", synthetic_total_recall},
        {"cmd_run determinism", run_determinism},
        {"logistic gradient check", gradient_check},
        {"E1 invariance and E3 zero-vector equivalence", e1_invariance},
        {"rerank contracts and input golden files", rerank_contracts},
        {"balanced pseudo-negative rule", balanced_rule},
        {"performance at 300k documents", performance},
        {"service durability across SIGKILL", service_durability},
    };
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        Outcome outcome;
        try {
            outcome = check();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        failures += !outcome.pass;
        std::cout << (outcome.pass ? "PASS" : "FAIL") << "  " << name << " (" << outcome.detail << ")" << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
