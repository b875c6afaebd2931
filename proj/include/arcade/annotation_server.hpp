#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "arcade/annotation.hpp"

namespace httplib {
class Server;
}

namespace arcade {

/// Audit records keyed by sample id, loaded from run directories.
class TranscriptIndex {
public:
    /// Accepts a transcripts.jsonl file or a run directory containing one.
    void add(const std::filesystem::path& path);
    std::vector<nlohmann::json> find(const std::string& sample_id) const;
    std::size_t size() const;

private:
    mutable std::mutex mu_;
    std::map<std::string, std::vector<nlohmann::json>> records_;
};

struct ServerOptions {
    std::string host = "127.0.0.1";
    /// 0 picks a free port.
    int port = 8080;
    /// Built console bundle; not mounted when empty or missing.
    std::filesystem::path static_dir;
};

/// REST front of an AnnotationStore. Every /api route needs `Authorization: Bearer <token>`.
class AnnotationServer {
public:
    AnnotationServer(AnnotationStore& store, TranscriptIndex& transcripts, ServerOptions options);
    ~AnnotationServer();

    AnnotationServer(const AnnotationServer&) = delete;
    AnnotationServer& operator=(const AnnotationServer&) = delete;

    /// Binds and returns the port. Throws ConfigError if the address is unavailable.
    int bind();
    /// Serves until stop(); call bind() first.
    void serve();
    /// bind() plus serve() on a background thread.
    int start();
    void stop();

private:
    void install_routes();

    AnnotationStore& store_;
    TranscriptIndex& transcripts_;
    ServerOptions options_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = -1;
};

}  // namespace arcade
