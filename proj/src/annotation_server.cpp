#include "arcade/annotation_server.hpp"

#include <fstream>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "arcade/dataset.hpp"

namespace arcade {

using nlohmann::json;

void TranscriptIndex::add(const std::filesystem::path& path) {
    auto file = std::filesystem::is_directory(path) ? path / "transcripts.jsonl" : path;
    std::ifstream in(file);
    if (!in) throw DataError("cannot open transcripts " + file.string());
    std::map<std::string, std::vector<json>> loaded;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            json j = json::parse(line);
            loaded[j.at("sample_id").get<std::string>()].push_back(std::move(j));
        } catch (const json::exception& e) {
            throw DataError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    std::lock_guard lock(mu_);
    for (auto& [id, recs] : loaded) {
        auto& dst = records_[id];
        for (auto& r : recs) dst.push_back(std::move(r));
    }
}

std::vector<json> TranscriptIndex::find(const std::string& sample_id) const {
    std::lock_guard lock(mu_);
    auto it = records_.find(sample_id);
    return it == records_.end() ? std::vector<json>{} : it->second;
}

std::size_t TranscriptIndex::size() const {
    std::lock_guard lock(mu_);
    return records_.size();
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, json{{"error", message}});
}

int http_status(AnnotationError::Code code) {
    switch (code) {
        case AnnotationError::Code::NotFound: return 404;
        case AnnotationError::Code::Forbidden: return 403;
        case AnnotationError::Code::Conflict: return 409;
        case AnnotationError::Code::Invalid: return 400;
    }
    return 500;
}

std::string bearer_token(const httplib::Request& req) {
    const std::string auth = req.get_header_value("Authorization");
    constexpr std::string_view prefix = "Bearer ";
    if (auth.size() <= prefix.size() || auth.compare(0, prefix.size(), prefix) != 0) return {};
    return auth.substr(prefix.size());
}

json parse_body(const httplib::Request& req) {
    try {
        json j = json::parse(req.body);
        if (!j.is_object()) throw AnnotationError(AnnotationError::Code::Invalid, "body must be an object");
        return j;
    } catch (const json::parse_error& e) {
        throw AnnotationError(AnnotationError::Code::Invalid, std::string("bad JSON body: ") + e.what());
    }
}

std::optional<std::uint64_t> body_version(const json& body) {
    auto v = body.find("version");
    if (v == body.end() || v->is_null()) return std::nullopt;
    if (!v->is_number_unsigned()) throw AnnotationError(AnnotationError::Code::Invalid, "version must be unsigned");
    return v->get<std::uint64_t>();
}

}  // namespace

AnnotationServer::AnnotationServer(AnnotationStore& store, TranscriptIndex& transcripts, ServerOptions options)
    : store_(store), transcripts_(transcripts), options_(std::move(options)),
      server_(std::make_unique<httplib::Server>()) {
    install_routes();
}

AnnotationServer::~AnnotationServer() { stop(); }

void AnnotationServer::install_routes() {
    auto& svr = *server_;

    // Wraps a handler with bearer auth and error mapping.
    auto guarded = [this](auto handler) {
        return [this, handler](const httplib::Request& req, httplib::Response& res) {
            const AnnotatorAccount* who = store_.roster().find_by_token(bearer_token(req));
            if (!who) {
                send_error(res, 401, "missing or unknown bearer token");
                return;
            }
            try {
                handler(*who, req, res);
            } catch (const AnnotationError& e) {
                send_error(res, http_status(e.code()), e.what());
            } catch (const DataError& e) {
                send_error(res, 400, e.what());
            } catch (const json::exception& e) {
                send_error(res, 400, e.what());
            }
        };
    };

    svr.Get("/api/tasks/next", guarded([this](const AnnotatorAccount& who, const httplib::Request& req,
                                              httplib::Response& res) {
        std::string annotator = req.has_param("annotator") ? req.get_param_value("annotator") : who.id;
        if (annotator != who.id) {
            throw AnnotationError(AnnotationError::Code::Forbidden, "token does not belong to '" + annotator + "'");
        }
        auto task = store_.next_task(annotator);
        send_json(res, 200, json{{"task", task ? task_view(*task) : json(nullptr)}});
    }));

    svr.Get(R"(/api/tasks/([^/]+))", guarded([this](const AnnotatorAccount&, const httplib::Request& req,
                                                    httplib::Response& res) {
        auto task = store_.get(req.matches[1]);
        if (!task) throw AnnotationError(AnnotationError::Code::NotFound, "unknown task");
        send_json(res, 200, task_view(*task));
    }));

    svr.Post(R"(/api/tasks/([^/]+)/annotation)", guarded([this](const AnnotatorAccount& who,
                                                               const httplib::Request& req, httplib::Response& res) {
        json body = parse_body(req);
        body["id"] = who.id;
        body.erase("adjudication");
        const auto record = body.get<AnnotatorRecord>();
        auto task = store_.submit(who.id, req.matches[1], record, body_version(body));
        send_json(res, 200, json{{"task", task_view(task)}});
    }));

    svr.Post(R"(/api/tasks/([^/]+)/adjudication)", guarded([this](const AnnotatorAccount& who,
                                                                 const httplib::Request& req, httplib::Response& res) {
        if (!who.is_expert) throw AnnotationError(AnnotationError::Code::Forbidden, "adjudication needs an expert");
        const json body = parse_body(req);
        const HateCategory label = category_from_json(body.at("label"), "label");
        std::optional<std::string> replaces;
        if (auto r = body.find("replaces"); r != body.end() && !r->is_null()) replaces = r->get<std::string>();
        auto task = store_.adjudicate(who.id, req.matches[1], label, replaces);
        send_json(res, 200, json{{"task", task_view(task)}});
    }));

    svr.Get("/api/progress", guarded([this](const AnnotatorAccount&, const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, to_json(store_.progress()));
    }));

    svr.Get(R"(/api/transcripts/([^/]+))", guarded([this](const AnnotatorAccount&, const httplib::Request& req,
                                                          httplib::Response& res) {
        const std::string id = req.matches[1];
        auto records = transcripts_.find(id);
        if (records.empty()) throw AnnotationError(AnnotationError::Code::NotFound, "no transcript for '" + id + "'");
        send_json(res, 200, json{{"sample_id", id}, {"records", records}});
    }));

    if (!options_.static_dir.empty()) {
        if (std::filesystem::is_directory(options_.static_dir)) {
            svr.set_mount_point("/", options_.static_dir.string());
        } else {
            spdlog::warn("console bundle {} not found; serving API only", options_.static_dir.string());
        }
    }
}

int AnnotationServer::bind() {
    if (port_ > 0) return port_;
    if (options_.port == 0) {
        port_ = server_->bind_to_any_port(options_.host);
    } else {
        port_ = server_->bind_to_port(options_.host, options_.port) ? options_.port : -1;
    }
    if (port_ <= 0) {
        throw ConfigError("cannot bind " + options_.host + ":" + std::to_string(options_.port));
    }
    return port_;
}

void AnnotationServer::serve() {
    spdlog::info("annotation service on {}:{}", options_.host, port_);
    server_->listen_after_bind();
}

int AnnotationServer::start() {
    const int port = bind();
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port;
}

void AnnotationServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace arcade
