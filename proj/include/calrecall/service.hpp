#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include <nlohmann/json.hpp>

#include "calrecall/manifest.hpp"
#include "calrecall/runner.hpp"
#include "calrecall/session.hpp"

namespace httplib {
class Server;
}

namespace calrecall {

/// Live review sessions over HTTP.
///
/// Each session lives under {data_dir}/sessions/{id}/ as meta.json, an
/// append-only journal.tsv of RunLog lines (fsynced before a judgment is
/// acknowledged) and a snapshot.json refreshed every `snapshot_every`
/// judgments. On load, sessions are rebuilt from the snapshot and the
/// journal tail is replayed through the same review loop.
class ReviewService {
  public:
    struct Reply {
        int status = 200;
        std::string body;
        std::string content_type = "application/json";
    };

    ReviewService(std::filesystem::path data_dir, std::string auth_token = {});
    ~ReviewService();

    ReviewService(const ReviewService&) = delete;
    ReviewService& operator=(const ReviewService&) = delete;

    /// Loads the data, builds features and resumes persisted sessions.
    /// Health turns ok afterwards.
    void load(const RunManifest& manifest);
    bool ready() const { return ready_; }

    Reply health() const;
    Reply create_session(const std::string& body);
    Reply get_session(const std::string& id);
    Reply next(const std::string& id);
    Reply judge(const std::string& id, const std::string& body);
    Reply metrics(const std::string& id);
    Reply export_log(const std::string& id);
    Reply close(const std::string& id);

    /// Binds without serving yet; port 0 picks a free port. Returns the
    /// bound port or -1.
    int bind(const std::string& host, int port);
    /// Serves until stop(). Call after bind().
    void listen();
    /// Stops serving and snapshots every open session.
    void stop();

  private:
    struct Live;

    std::shared_ptr<Live> find(const std::string& id);
    std::shared_ptr<Live> open_session(const std::string& id, const std::string& topic_id,
                                       const nlohmann::json& overrides, const std::string& created_at);
    void resume(const std::filesystem::path& dir);
    void write_meta(const Live& live) const;
    void write_snapshot(const Live& live) const;
    SessionConfig session_config(const nlohmann::json& overrides) const;
    nlohmann::json handle_json(const Live& live) const;
    void install_routes();

    std::filesystem::path data_dir_;
    std::string auth_token_;
    std::atomic<bool> ready_{false};

    RunManifest manifest_;
    std::unique_ptr<DataSet> data_;
    std::unique_ptr<FeatureIndex> index_;
    std::shared_ptr<Scorer> scorer_;

    std::mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Live>> sessions_;

    std::unique_ptr<httplib::Server> server_;
};

/// "host:port" into its parts; throws ConfigError("BIND_ADDR") when malformed.
std::pair<std::string, int> parse_bind_address(const std::string& address);

}  // namespace calrecall
