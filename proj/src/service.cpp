#include "calrecall/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <httplib.h>

#include "calrecall/error.hpp"
#include "calrecall/eval.hpp"
#include "calrecall/runlog.hpp"
#include "calrecall/text_io.hpp"

namespace calrecall {

namespace fs = std::filesystem;
using nlohmann::json;

struct ReviewService::Live {
    std::mutex mutex;
    std::string id;
    std::string topic_id;
    std::string created_at;
    std::string state = "active";
    json overrides = json::object();
    fs::path dir;
    std::unique_ptr<Session> session;
    int journal_fd = -1;

    ~Live()
    {
        if (journal_fd >= 0) {
            ::close(journal_fd);
        }
    }
};

namespace {

ReviewService::Reply json_reply(int status, const json& body) { return {status, body.dump(), "application/json"}; }

ReviewService::Reply error_reply(int status, const std::string& message, const std::string& field = {})
{
    json body{{"error", message}};
    if (!field.empty()) {
        body["field"] = field;
    }
    return json_reply(status, body);
}

std::string utc_now()
{
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string random_id()
{
    static std::mutex mutex;
    static std::mt19937_64 engine{std::random_device{}()};
    std::lock_guard lock(mutex);
    char buf[20];
    std::snprintf(buf, sizeof buf, "s%012llx", static_cast<unsigned long long>(engine() & 0xffffffffffffULL));
    return buf;
}

void write_atomically(const fs::path& path, const std::string& content)
{
    fs::path tmp = path;
    tmp += ".tmp";
    {
        auto out = open_for_write(tmp);
        out << content;
        out.flush();
        if (!out) {
            throw IoError("cannot write " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

void append_durably(int fd, const std::string& line, const fs::path& path)
{
    std::size_t done = 0;
    while (done < line.size()) {
        ssize_t n = ::write(fd, line.data() + done, line.size() - done);
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            throw IoError("cannot append to " + path.string());
        }
        done += static_cast<std::size_t>(n);
    }
    if (::fsync(fd) != 0) {
        throw IoError("cannot sync " + path.string());
    }
}

/// Complete journal lines. A trailing fragment without its newline was
/// never acknowledged and is dropped.
RunLog read_journal(const fs::path& path)
{
    RunLog log;
    if (!fs::exists(path)) {
        return log;
    }
    const std::string content = read_file(path);
    std::size_t start = 0;
    std::size_t number = 0;
    while (true) {
        auto end = content.find('\n', start);
        if (end == std::string::npos) {
            break;
        }
        ++number;
        std::string_view line(content.data() + start, end - start);
        if (!line.empty()) {
            log.push_back(parse_runlog_line(line, path.string(), number));
        }
        start = end + 1;
    }
    return log;
}

Judgment parse_judgment_value(const json& v)
{
    if (v.is_boolean()) {
        return v.get<bool>() ? Judgment::relevant : Judgment::nonrelevant;
    }
    if (v.is_number_integer()) {
        auto i = v.get<long long>();
        if (i == 0 || i == 1) {
            return i == 1 ? Judgment::relevant : Judgment::nonrelevant;
        }
    }
    if (v.is_string()) {
        auto s = v.get<std::string>();
        if (s == "relevant") {
            return Judgment::relevant;
        }
        if (s == "nonrelevant" || s == "not_relevant") {
            return Judgment::nonrelevant;
        }
    }
    throw ConfigError("judgment", "expected relevant/nonrelevant, true/false or 1/0");
}

}  // namespace

std::pair<std::string, int> parse_bind_address(const std::string& address)
{
    auto colon = address.rfind(':');
    if (colon == std::string::npos || colon == 0) {
        throw ConfigError("BIND_ADDR", "expected host:port, got '" + address + "'");
    }
    auto port = parse_int(std::string_view(address).substr(colon + 1));
    if (!port || *port < 0 || *port > 65535) {
        throw ConfigError("BIND_ADDR", "bad port in '" + address + "'");
    }
    return {address.substr(0, colon), static_cast<int>(*port)};
}

ReviewService::ReviewService(fs::path data_dir, std::string auth_token)
    : data_dir_(std::move(data_dir)), auth_token_(std::move(auth_token)), server_(std::make_unique<httplib::Server>())
{
    install_routes();
}

ReviewService::~ReviewService() = default;

SessionConfig ReviewService::session_config(const json& overrides) const
{
    SessionConfig config = manifest_.session;
    if (!overrides.is_object()) {
        throw ConfigError("config", "must be an object");
    }
    for (const auto& [key, value] : overrides.items()) {
        auto count = [&, key = key](long long min) {
            if (!value.is_number_integer() || value.get<long long>() < min) {
                throw ConfigError(key, "expected an integer >= " + std::to_string(min));
            }
            return static_cast<std::size_t>(value.get<long long>());
        };
        auto text = [&, key = key] {
            if (!value.is_string()) {
                throw ConfigError(key, "expected a string");
            }
            return value.get<std::string>();
        };
        if (key == "negatives") {
            config.negative_sampling = parse_negative_sampling(text());
        } else if (key == "bmi_negatives") {
            config.bmi_negatives = count(0);
        } else if (key == "retrain_every") {
            config.retrain_every = count(1);
        } else if (key == "batch_size") {
            config.batch_size = count(1);
        } else if (key == "seed") {
            config.seed = count(0);
        } else if (key == "cold_start") {
            config.cold_start = parse_cold_start(text());
        } else if (key == "epochs") {
            config.train.epochs = static_cast<unsigned>(count(1));
        } else if (key == "mode") {
            config.train.mode = parse_train_mode(text());
        } else if (key == "lambda") {
            if (!value.is_number()) {
                throw ConfigError(key, "expected a number");
            }
            config.train.lambda = value.get<double>();
        } else if (key == "fusion") {
            if (parse_fusion(text()) != config.fusion) {
                throw ConfigError(key, "this service was loaded with fusion " +
                                           std::string(to_string(config.fusion)));
            }
        } else {
            throw ConfigError(key, "unknown setting");
        }
    }
    config.stop_after.reset();
    config.validate();
    return config;
}

json ReviewService::handle_json(const Live& live) const
{
    return {{"session_id", live.id},
            {"topic_id", live.topic_id},
            {"created_at", live.created_at},
            {"state", live.state},
            {"iteration", live.session->iteration()}};
}

void ReviewService::write_meta(const Live& live) const
{
    json meta{{"session_id", live.id},
              {"topic_id", live.topic_id},
              {"created_at", live.created_at},
              {"state", live.state},
              {"config", live.overrides}};
    write_atomically(live.dir / "meta.json", meta.dump(2) + "\n");
}

void ReviewService::write_snapshot(const Live& live) const
{
    write_atomically(live.dir / "snapshot.json", to_json(live.session->snapshot()).dump() + "\n");
}

std::shared_ptr<ReviewService::Live> ReviewService::open_session(const std::string& id, const std::string& topic_id,
                                                                 const json& overrides, const std::string& created_at)
{
    const auto& topics = data_->topics;
    auto topic = std::find_if(topics.begin(), topics.end(), [&](const Topic& t) { return t.id == topic_id; });
    if (topic == topics.end()) {
        return nullptr;
    }
    auto live = std::make_shared<Live>();
    live->id = id;
    live->topic_id = topic_id;
    live->created_at = created_at;
    live->overrides = overrides;
    live->dir = data_dir_ / "sessions" / id;
    live->session =
        std::make_unique<Session>(*topic, *index_, data_->query_embeddings(), session_config(overrides), scorer_);
    return live;
}

void ReviewService::resume(const fs::path& dir)
{
    const json meta = json::parse(read_file(dir / "meta.json"));
    const auto id = meta.at("session_id").get<std::string>();
    auto live = open_session(id, meta.at("topic_id").get<std::string>(), meta.value("config", json::object()),
                             meta.at("created_at").get<std::string>());
    if (!live) {
        throw std::invalid_argument("session " + id + " refers to a topic that is no longer loaded");
    }
    live->state = meta.value("state", std::string("active"));

    const fs::path journal_path = dir / "journal.tsv";
    const RunLog journal = read_journal(journal_path);
    auto& session = *live->session;
    if (fs::exists(dir / "snapshot.json")) {
        auto snapshot = snapshot_from_json(json::parse(read_file(dir / "snapshot.json")));
        if (snapshot.iteration <= journal.size()) {
            session.restore(snapshot, journal);
        }
    }
    for (std::size_t i = session.iteration(); i < journal.size(); ++i) {
        const auto& entry = journal[i];
        auto batch = session.next_candidates();
        bool offered = std::any_of(batch.items.begin(), batch.items.end(),
                                   [&](const Candidate& c) { return c.doc_id == entry.doc_id; });
        if (!offered) {
            throw std::runtime_error("session " + id + ": journal diverges from replay at iteration " +
                                     std::to_string(i + 1));
        }
        session.record_judgment(entry.doc_id, entry.judgment);
    }

    // rewrite the journal without any torn tail before appending to it
    {
        std::ostringstream clean;
        write_runlog(session.log(), clean);
        write_atomically(journal_path, clean.str());
    }
    live->journal_fd = ::open(journal_path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
    if (live->journal_fd < 0) {
        throw IoError("cannot open " + journal_path.string());
    }
    if (live->state == "active" && session.exhausted()) {
        live->state = "exhausted";
    }
    std::lock_guard lock(sessions_mutex_);
    sessions_[id] = std::move(live);
}

void ReviewService::load(const RunManifest& manifest)
{
    manifest.validate();
    manifest_ = manifest;
    data_ = load_dataset(manifest_);
    index_ = build_index(*data_, manifest_);
    if (manifest_.session.rerank) {
        scorer_ = make_scorer(*manifest_.session.rerank);
    }
    const fs::path root = data_dir_ / "sessions";
    fs::create_directories(root);
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) {
            dirs.push_back(entry.path());
        }
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
        resume(dir);
    }
    ready_ = true;
}

std::shared_ptr<ReviewService::Live> ReviewService::find(const std::string& id)
{
    std::lock_guard lock(sessions_mutex_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

ReviewService::Reply ReviewService::health() const
{
    if (!ready_) {
        return error_reply(503, "loading");
    }
    return json_reply(200, {{"status", "ok"}});
}

ReviewService::Reply ReviewService::create_session(const std::string& body)
{
    json request;
    try {
        request = body.empty() ? json::object() : json::parse(body);
    } catch (const json::parse_error&) {
        return error_reply(400, "body is not JSON");
    }
    if (!request.is_object() || !request.contains("topic_id") || !request["topic_id"].is_string()) {
        return error_reply(400, "topic_id is required", "topic_id");
    }
    const auto topic_id = request["topic_id"].get<std::string>();
    const json overrides = request.value("config", json::object());

    std::string id;
    {
        std::lock_guard lock(sessions_mutex_);
        do {
            id = random_id();
        } while (sessions_.count(id) != 0 || fs::exists(data_dir_ / "sessions" / id));
    }
    std::shared_ptr<Live> live;
    try {
        live = open_session(id, topic_id, overrides, utc_now());
    } catch (const ConfigError& e) {
        return error_reply(400, e.what(), e.field());
    }
    if (!live) {
        return error_reply(404, "unknown topic '" + topic_id + "'");
    }
    fs::create_directories(live->dir);
    write_meta(*live);
    write_snapshot(*live);
    const fs::path journal_path = live->dir / "journal.tsv";
    live->journal_fd = ::open(journal_path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
    if (live->journal_fd < 0) {
        throw IoError("cannot open " + journal_path.string());
    }
    json handle = handle_json(*live);
    {
        std::lock_guard lock(sessions_mutex_);
        sessions_[id] = std::move(live);
    }
    return json_reply(201, handle);
}

ReviewService::Reply ReviewService::get_session(const std::string& id)
{
    auto live = find(id);
    if (!live) {
        return error_reply(404, "unknown session '" + id + "'");
    }
    std::lock_guard lock(live->mutex);
    return json_reply(200, handle_json(*live));
}

ReviewService::Reply ReviewService::next(const std::string& id)
{
    auto live = find(id);
    if (!live) {
        return error_reply(404, "unknown session '" + id + "'");
    }
    std::lock_guard lock(live->mutex);
    if (live->state == "closed") {
        return json_reply(409, {{"error", "session is closed"}, {"state", "closed"}});
    }
    auto& session = *live->session;
    auto batch = session.next_candidates();
    if (batch.exhausted) {
        if (live->state != "exhausted") {
            live->state = "exhausted";
            write_meta(*live);
        }
        return json_reply(200, {{"state", "exhausted"}, {"iteration", session.iteration()}});
    }
    const auto& top = batch.items.front();
    return json_reply(200, {{"state", live->state},
                            {"doc_id", top.doc_id},
                            {"text", index_->corpus().doc(top.doc).text},
                            {"score", top.final_score},
                            {"iteration", session.iteration() + 1}});
}

ReviewService::Reply ReviewService::judge(const std::string& id, const std::string& body)
{
    auto live = find(id);
    if (!live) {
        return error_reply(404, "unknown session '" + id + "'");
    }
    json request;
    try {
        request = json::parse(body);
    } catch (const json::parse_error&) {
        return error_reply(400, "body is not JSON");
    }
    if (!request.is_object() || !request.contains("doc_id") || !request["doc_id"].is_string()) {
        return error_reply(400, "doc_id is required", "doc_id");
    }
    Judgment judgment;
    try {
        if (request.contains("judgment")) {
            judgment = parse_judgment_value(request["judgment"]);
        } else if (request.contains("relevant")) {
            judgment = parse_judgment_value(request["relevant"]);
        } else {
            return error_reply(400, "judgment is required", "judgment");
        }
    } catch (const ConfigError& e) {
        return error_reply(400, e.what(), e.field());
    }
    const auto doc_id = request["doc_id"].get<std::string>();

    std::lock_guard lock(live->mutex);
    if (live->state != "active") {
        return json_reply(409, {{"error", "session is " + live->state}, {"state", live->state}});
    }
    auto& session = *live->session;
    auto batch = session.next_candidates();
    auto offered = std::find_if(batch.items.begin(), batch.items.end(),
                                [&](const Candidate& c) { return c.doc_id == doc_id; });
    if (offered == batch.items.end()) {
        return error_reply(409, "document '" + doc_id + "' is not the one on offer");
    }
    RunLogEntry entry{session.iteration() + 1, doc_id, offered->first_stage_score, offered->final_score, judgment};
    append_durably(live->journal_fd, format_runlog_line(entry) + "\n", live->dir / "journal.tsv");
    session.record_judgment(doc_id, judgment);
    if (session.iteration() % manifest_.snapshot_every == 0) {
        write_snapshot(*live);
    }
    if (session.exhausted()) {
        live->state = "exhausted";
        write_meta(*live);
    }
    return json_reply(200, {{"accepted", true}, {"next_iteration", session.iteration() + 1}, {"state", live->state}});
}

ReviewService::Reply ReviewService::metrics(const std::string& id)
{
    auto live = find(id);
    if (!live) {
        return error_reply(404, "unknown session '" + id + "'");
    }
    RunLog log;
    {
        std::lock_guard lock(live->mutex);
        log = live->session->log();
    }
    std::size_t r_t = 0;
    if (data_->qrels.has_topic(live->topic_id)) {
        r_t = data_->qrels.relevant_count(live->topic_id);
    } else {
        r_t = static_cast<std::size_t>(std::count_if(
            log.begin(), log.end(), [](const RunLogEntry& e) { return e.judgment == Judgment::relevant; }));
    }
    return {200, to_json(evaluate(live->topic_id, log, r_t)).dump(), "application/json"};
}

ReviewService::Reply ReviewService::export_log(const std::string& id)
{
    auto live = find(id);
    if (!live) {
        return error_reply(404, "unknown session '" + id + "'");
    }
    std::ostringstream out;
    {
        std::lock_guard lock(live->mutex);
        write_runlog(live->session->log(), out);
    }
    return {200, out.str(), "text/tab-separated-values"};
}

ReviewService::Reply ReviewService::close(const std::string& id)
{
    auto live = find(id);
    if (!live) {
        return error_reply(404, "unknown session '" + id + "'");
    }
    std::lock_guard lock(live->mutex);
    if (live->state != "closed") {
        live->state = "closed";
        write_snapshot(*live);
        write_meta(*live);
    }
    return json_reply(200, handle_json(*live));
}

void ReviewService::install_routes()
{
    auto& s = *server_;
    auto send = [](httplib::Response& res, const Reply& reply) {
        res.status = reply.status;
        res.set_content(reply.body, reply.content_type);
    };

    s.set_pre_routing_handler([this, send](const httplib::Request& req, httplib::Response& res) {
        if (req.path == "/healthz") {
            return httplib::Server::HandlerResponse::Unhandled;
        }
        if (!auth_token_.empty() && req.get_header_value("Authorization") != "Bearer " + auth_token_) {
            send(res, error_reply(401, "missing or wrong bearer token"));
            return httplib::Server::HandlerResponse::Handled;
        }
        if (!ready_) {
            send(res, error_reply(503, "loading"));
            return httplib::Server::HandlerResponse::Handled;
        }
        return httplib::Server::HandlerResponse::Unhandled;
    });
    s.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            send(res, error_reply(500, e.what()));
        } catch (...) {
            send(res, error_reply(500, "unknown error"));
        }
    });

    s.Get("/healthz", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
    s.Post("/sessions", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, create_session(req.body));
    });
    s.Get(R"(/sessions/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, get_session(req.matches[1]));
    });
    s.Get(R"(/sessions/([^/]+)/next)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, next(req.matches[1]));
    });
    s.Post(R"(/sessions/([^/]+)/judgments)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, judge(req.matches[1], req.body));
    });
    s.Get(R"(/sessions/([^/]+)/metrics)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, metrics(req.matches[1]));
    });
    s.Get(R"(/sessions/([^/]+)/export)", [this, send](const httplib::Request& req, httplib::Response& res) {
        auto reply = export_log(req.matches[1]);
        if (reply.status == 200) {
            res.set_header("Content-Disposition", "attachment; filename=\"runlog.tsv\"");
        }
        send(res, reply);
    });
    s.Post(R"(/sessions/([^/]+)/close)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, close(req.matches[1]));
    });
}

int ReviewService::bind(const std::string& host, int port)
{
    if (port == 0) {
        return server_->bind_to_any_port(host);
    }
    return server_->bind_to_port(host, port) ? port : -1;
}

void ReviewService::listen() { server_->listen_after_bind(); }

void ReviewService::stop()
{
    server_->stop();
    std::lock_guard lock(sessions_mutex_);
    for (auto& [id, live] : sessions_) {
        std::lock_guard session_lock(live->mutex);
        write_snapshot(*live);
    }
}

}  // namespace calrecall
