#include "arcade/backend.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "arcade/dataset.hpp"

#include <httplib.h>

namespace arcade {

using nlohmann::json;

void BackendEndpoint::validate() const {
    if (!(base_url.starts_with("http://") || base_url.starts_with("https://")) ||
        base_url.find_first_of(" \t\n") != std::string::npos || base_url.size() <= 8) {
        throw ConfigError("malformed backend url: '" + base_url + "'");
    }
    if (timeout.count() <= 0) {
        throw ConfigError("backend timeout must be positive");
    }
    if (api_key_env.empty()) {
        throw ConfigError("api_key_env must name an environment variable");
    }
}

std::chrono::milliseconds RequestPolicy::backoff_for(int retry) const {
    if (retry < 1) {
        return std::chrono::milliseconds{0};
    }
    const int shift = std::min(retry - 1, 30);
    return backoff_base * (1LL << shift);
}

void RequestPolicy::validate() const {
    if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
    if (backoff_base.count() <= 0) throw ConfigError("backoff_base must be positive");
    if (rate_limit < 0) throw ConfigError("rate_limit must be >= 0");
}

std::string_view message_role_name(MessageRole r) {
    switch (r) {
        case MessageRole::System: return "system";
        case MessageRole::User: return "user";
        case MessageRole::Assistant: return "assistant";
    }
    return "user";
}

std::string ChatMessage::text() const {
    std::string out;
    for (const auto& p : parts) {
        if (const auto* t = std::get_if<TextPart>(&p)) {
            out += t->text;
        }
    }
    return out;
}

std::size_t ChatMessage::image_count() const {
    return static_cast<std::size_t>(
        std::count_if(parts.begin(), parts.end(), [](const ContentPart& p) { return std::holds_alternative<ImagePart>(p); }));
}

void ChatMessage::validate() const {
    if (parts.empty()) {
        throw std::invalid_argument("chat message has no parts");
    }
    if (role != MessageRole::User && image_count() > 0) {
        throw std::invalid_argument("image parts are only allowed in user messages");
    }
}

std::string_view finish_kind_name(FinishKind k) {
    switch (k) {
        case FinishKind::Ok: return "ok";
        case FinishKind::SafetyRefusal: return "safety_refusal";
        case FinishKind::FormatError: return "format_error";
        case FinishKind::TransportError: return "transport_error";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Clocks and rate limiting

void SteadyClock::sleep_until(time_point t) { std::this_thread::sleep_until(t); }

SteadyClock& steady_clock_instance() {
    static SteadyClock clock;
    return clock;
}

VirtualClock::time_point VirtualClock::now() {
    std::lock_guard lock(mu_);
    return now_;
}

void VirtualClock::sleep_until(time_point t) {
    std::lock_guard lock(mu_);
    if (t > now_) {
        slept_ += t - now_;
        now_ = t;
    }
}

void VirtualClock::advance(duration d) {
    std::lock_guard lock(mu_);
    now_ += d;
}

VirtualClock::duration VirtualClock::total_slept() const {
    std::lock_guard lock(mu_);
    return slept_;
}

RateLimiter::RateLimiter(int per_minute, Clock& clock) : per_minute_(per_minute), clock_(clock) {
    if (per_minute <= 0) {
        throw std::invalid_argument("rate limiter needs a positive limit");
    }
}

void RateLimiter::acquire() {
    constexpr auto kWindow = std::chrono::minutes(1);
    for (;;) {
        Clock::time_point wake;
        {
            std::lock_guard lock(mu_);
            const auto now = clock_.now();
            while (!window_.empty() && window_.front() + kWindow <= now) {
                window_.pop_front();
            }
            if (static_cast<int>(window_.size()) < per_minute_) {
                window_.push_back(now);
                history_.push_back(now);
                return;
            }
            wake = window_.front() + kWindow;
        }
        clock_.sleep_until(wake);
    }
}

std::vector<Clock::time_point> RateLimiter::admissions() const {
    std::lock_guard lock(mu_);
    return history_;
}

// ---------------------------------------------------------------------------
// ChatClient

std::vector<std::string> default_refusal_patterns() {
    return {
        "i can't help with",     "i cannot help with",   "i can’t help with", "i can't assist with",
        "i cannot assist with",  "i’m sorry, but i can", "i'm sorry, but i can", "i am unable to help",
        "i'm unable to help",    "i won't be able to help",   "i cannot comply",        "i can't comply",
    };
}

ChatClient::ChatClient(std::shared_ptr<ChatBackend> backend, RequestPolicy policy, Clock& clock,
                       std::vector<std::string> refusal_patterns)
    : backend_(std::move(backend)), policy_(policy), clock_(clock), refusal_patterns_(std::move(refusal_patterns)) {
    if (!backend_) {
        throw std::invalid_argument("ChatClient needs a backend");
    }
    policy_.validate();
    for (auto& p : refusal_patterns_) {
        std::transform(p.begin(), p.end(), p.begin(), [](unsigned char c) { return std::tolower(c); });
    }
    if (policy_.rate_limit > 0) {
        limiter_ = std::make_unique<RateLimiter>(policy_.rate_limit, clock_);
    }
}

bool ChatClient::looks_like_refusal(const std::string& text) const {
    std::string lowered(text);
    std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char c) { return std::tolower(c); });
    return std::any_of(refusal_patterns_.begin(), refusal_patterns_.end(),
                       [&](const std::string& p) { return lowered.find(p) != std::string::npos; });
}

AgentReply ChatClient::complete(CompletionRequest request, const ReplyValidator& validate) {
    if (request.messages.empty()) {
        throw std::invalid_argument("completion request without messages");
    }
    for (const auto& m : request.messages) {
        m.validate();
    }
    AgentReply reply;
    const int max_attempts = 1 + policy_.max_retries;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        if (attempt > 1) {
            clock_.sleep_for(policy_.backoff_for(attempt - 1));
        }
        if (limiter_) {
            limiter_->acquire();
        }
        request.attempt = attempt;
        RawResponse raw = backend_->send(request);
        reply.attempts_used = attempt;
        reply.raw_text = raw.text;
        reply.usage = raw.usage;
        switch (raw.status) {
            case RawResponse::Status::ContentFilter:
                reply.finish_kind = FinishKind::SafetyRefusal;
                reply.detail = raw.detail.empty() ? "provider content filter" : raw.detail;
                return reply;
            case RawResponse::Status::Ok: {
                if (raw.text.empty()) {
                    reply.finish_kind = FinishKind::FormatError;
                    reply.detail = "empty reply";
                    break;
                }
                std::optional<std::string> problem;
                if (validate) {
                    problem = validate(raw.text);
                }
                if (!problem) {
                    // A well-formed payload is never a refusal, whatever its prose says.
                    if (validate || !looks_like_refusal(raw.text)) {
                        reply.finish_kind = FinishKind::Ok;
                        reply.detail.clear();
                        return reply;
                    }
                }
                if (looks_like_refusal(raw.text)) {
                    reply.finish_kind = FinishKind::SafetyRefusal;
                    reply.detail = "refusal phrase in reply";
                    return reply;
                }
                reply.finish_kind = FinishKind::FormatError;
                reply.detail = *problem;
                break;
            }
            case RawResponse::Status::Malformed:
                reply.finish_kind = FinishKind::FormatError;
                reply.detail = raw.detail.empty() ? "malformed response payload" : raw.detail;
                break;
            case RawResponse::Status::TransportFailure:
                reply.finish_kind = FinishKind::TransportError;
                reply.detail = raw.detail.empty() ? "transport failure" : raw.detail;
                if (!raw.retryable) {
                    return reply;
                }
                break;
        }
        spdlog::debug("{}/{}/{} attempt {} failed: {} ({})", request.key.role, request.key.sample_id,
                      request.key.turn, attempt, finish_kind_name(reply.finish_kind), reply.detail);
    }
    return reply;
}

// ---------------------------------------------------------------------------
// Mock

namespace {

RawResponse::Status status_from_name(const std::string& s) {
    if (s == "ok") return RawResponse::Status::Ok;
    if (s == "content_filter" || s == "refusal") return RawResponse::Status::ContentFilter;
    if (s == "malformed") return RawResponse::Status::Malformed;
    if (s == "transport_failure" || s == "transport_error") return RawResponse::Status::TransportFailure;
    throw DataError("unknown scripted status '" + s + "'");
}

std::string status_name(RawResponse::Status s) {
    switch (s) {
        case RawResponse::Status::Ok: return "ok";
        case RawResponse::Status::ContentFilter: return "content_filter";
        case RawResponse::Status::Malformed: return "malformed";
        case RawResponse::Status::TransportFailure: return "transport_failure";
    }
    return "ok";
}

ScriptedReply reply_from_json(const json& j) {
    if (j.is_string()) {
        return ScriptedReply::ok(j.get<std::string>());
    }
    if (!j.is_object()) {
        throw DataError("scripted reply must be a string or object");
    }
    ScriptedReply r;
    r.status = status_from_name(j.value("status", std::string("ok")));
    if (auto p = j.find("json"); p != j.end()) {
        r.text = p->dump();
    } else {
        r.text = j.value("text", std::string());
    }
    return r;
}

json reply_to_json(const ScriptedReply& r) {
    json j{{"status", status_name(r.status)}};
    if (!r.text.empty()) j["text"] = r.text;
    return j;
}

}  // namespace

void MockScript::set(const std::string& role, const std::string& sample_id, int turn,
                     std::vector<ScriptedReply> replies) {
    if (replies.empty()) {
        throw std::invalid_argument("mock entry needs at least one reply");
    }
    entries_[{role, sample_id, turn}] = std::move(replies);
}

const ScriptedReply& MockScript::lookup(const CallKey& key, int attempt) const {
    const Key candidates[] = {
        {key.role, key.sample_id, key.turn},
        {key.role, key.sample_id, kAnyTurn},
        {key.role, "*", key.turn},
        {key.role, "*", kAnyTurn},
    };
    for (const auto& k : candidates) {
        if (auto it = entries_.find(k); it != entries_.end()) {
            const auto& replies = it->second;
            const auto idx = static_cast<std::size_t>(std::max(attempt, 1) - 1);
            return replies[std::min(idx, replies.size() - 1)];
        }
    }
    return fallback_;
}

MockScript MockScript::from_json(const json& j) {
    if (!j.is_object()) {
        throw DataError("mock script must be an object");
    }
    MockScript script;
    if (auto f = j.find("fallback"); f != j.end()) {
        script.fallback_ = reply_from_json(*f);
    }
    if (auto e = j.find("entries"); e != j.end()) {
        if (!e->is_array()) {
            throw DataError("mock script 'entries' must be an array");
        }
        for (const auto& entry : *e) {
            const std::string role = entry.at("role").get<std::string>();
            const std::string sample = entry.value("sample", std::string("*"));
            int turn = kAnyTurn;
            if (auto t = entry.find("turn"); t != entry.end() && !(t->is_string() && *t == "*")) {
                turn = t->get<int>();
            }
            std::vector<ScriptedReply> replies;
            if (auto rs = entry.find("replies"); rs != entry.end()) {
                for (const auto& r : *rs) replies.push_back(reply_from_json(r));
            } else {
                replies.push_back(reply_from_json(entry.at("reply")));
            }
            script.set(role, sample, turn, std::move(replies));
        }
    }
    return script;
}

MockScript MockScript::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open mock script " + path.string());
    }
    try {
        return from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw DataError("mock script " + path.string() + ": " + e.what());
    }
}

json MockScript::to_json() const {
    json entries = json::array();
    for (const auto& [key, replies] : entries_) {
        const auto& [role, sample, turn] = key;
        json e{{"role", role}, {"sample", sample}};
        e["turn"] = turn == kAnyTurn ? json("*") : json(turn);
        json rs = json::array();
        for (const auto& r : replies) rs.push_back(reply_to_json(r));
        e["replies"] = std::move(rs);
        entries.push_back(std::move(e));
    }
    return json{{"fallback", reply_to_json(fallback_)}, {"entries", std::move(entries)}};
}

RawResponse MockBackend::send(const CompletionRequest& request) {
    const ScriptedReply& r = script_.lookup(request.key, request.attempt);
    RawResponse out;
    out.status = r.status;
    out.text = r.text;
    if (r.status == RawResponse::Status::ContentFilter) {
        out.detail = "scripted content filter";
    }
    return out;
}

RawResponse RecordingBackend::send(const CompletionRequest& request) {
    {
        std::lock_guard lock(mu_);
        calls_.push_back(request);
    }
    return inner_->send(request);
}

std::vector<CompletionRequest> RecordingBackend::calls() const {
    std::lock_guard lock(mu_);
    return calls_;
}

std::vector<CompletionRequest> RecordingBackend::calls_for(const std::string& sample_id) const {
    std::lock_guard lock(mu_);
    std::vector<CompletionRequest> out;
    std::copy_if(calls_.begin(), calls_.end(), std::back_inserter(out),
                 [&](const CompletionRequest& r) { return r.key.sample_id == sample_id; });
    return out;
}

void RecordingBackend::clear() {
    std::lock_guard lock(mu_);
    calls_.clear();
}

// ---------------------------------------------------------------------------
// HTTP transport

std::string base64_encode(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                  reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::string mime_type_for(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") return "image/png";
    if (ext == ".gif") return "image/gif";
    if (ext == ".webp") return "image/webp";
    if (ext == ".bmp") return "image/bmp";
    return "image/jpeg";
}

namespace {

std::string image_url_for(const ImagePart& img, bool inline_images) {
    if (!img.bytes.empty()) {
        const std::string mime = img.mime_type.empty() ? "image/jpeg" : img.mime_type;
        return "data:" + mime + ";base64," + base64_encode(img.bytes);
    }
    if (is_url(img.locator) || !inline_images) {
        return img.locator;
    }
    std::ifstream in(img.locator, std::ios::binary);
    if (!in) {
        throw DataError("cannot read image " + img.locator);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string mime = img.mime_type.empty() ? mime_type_for(img.locator) : img.mime_type;
    return "data:" + mime + ";base64," + base64_encode(buf.str());
}

bool mentions_content_filter(const json& err) {
    auto has = [](const std::string& s) {
        std::string l(s);
        std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
        return l.find("content_filter") != std::string::npos || l.find("content_policy") != std::string::npos ||
               l.find("responsibleaipolicyviolation") != std::string::npos;
    };
    for (const char* field : {"code", "type"}) {
        if (auto it = err.find(field); it != err.end() && it->is_string() && has(it->get<std::string>())) {
            return true;
        }
    }
    if (auto inner = err.find("innererror"); inner != err.end() && inner->is_object()) {
        return mentions_content_filter(*inner);
    }
    return false;
}

}  // namespace

json build_chat_request_body(const CompletionRequest& request) {
    json messages = json::array();
    for (const auto& m : request.messages) {
        json content = json::array();
        for (const auto& part : m.parts) {
            if (const auto* t = std::get_if<TextPart>(&part)) {
                content.push_back({{"type", "text"}, {"text", t->text}});
            } else {
                const auto& img = std::get<ImagePart>(part);
                content.push_back(
                    {{"type", "image_url"}, {"image_url", {{"url", image_url_for(img, request.endpoint.inline_images)}}}});
            }
        }
        messages.push_back({{"role", message_role_name(m.role)}, {"content", std::move(content)}});
    }
    json body{{"model", request.endpoint.model}, {"temperature", request.temperature}, {"messages", std::move(messages)}};
    if (request.seed) {
        body["seed"] = *request.seed;
    }
    return body;
}

RawResponse parse_chat_response(int http_status, const std::string& body) {
    RawResponse out;
    json j = json::parse(body, nullptr, false);
    if (http_status != 200) {
        out.status = RawResponse::Status::TransportFailure;
        out.detail = "HTTP " + std::to_string(http_status);
        if (!j.is_discarded() && j.is_object()) {
            if (auto err = j.find("error"); err != j.end() && err->is_object()) {
                if (mentions_content_filter(*err)) {
                    out.status = RawResponse::Status::ContentFilter;
                    out.detail = "provider content filter (HTTP " + std::to_string(http_status) + ")";
                    return out;
                }
                if (auto msg = err->find("message"); msg != err->end() && msg->is_string()) {
                    out.detail += ": " + msg->get<std::string>();
                }
            }
        }
        out.retryable = http_status <= 0 || http_status == 408 || http_status == 409 || http_status == 429 ||
                        http_status >= 500;
        return out;
    }
    if (j.is_discarded() || !j.is_object()) {
        out.status = RawResponse::Status::Malformed;
        out.detail = "response body is not a JSON object";
        return out;
    }
    auto choices = j.find("choices");
    if (choices == j.end() || !choices->is_array() || choices->empty() || !(*choices)[0].is_object()) {
        out.status = RawResponse::Status::Malformed;
        out.detail = "response has no choices";
        return out;
    }
    const json& choice = (*choices)[0];
    if (auto u = j.find("usage"); u != j.end() && u->is_object()) {
        out.usage = TokenUsage{u->value("prompt_tokens", 0LL), u->value("completion_tokens", 0LL),
                               u->value("total_tokens", 0LL)};
    }
    if (choice.value("finish_reason", std::string()) == "content_filter") {
        out.status = RawResponse::Status::ContentFilter;
        out.detail = "finish_reason=content_filter";
        return out;
    }
    const json message = choice.value("message", json::object());
    if (auto refusal = message.find("refusal"); refusal != message.end() && refusal->is_string() &&
                                                !refusal->get<std::string>().empty()) {
        out.status = RawResponse::Status::ContentFilter;
        out.text = refusal->get<std::string>();
        out.detail = "message.refusal";
        return out;
    }
    auto content = message.find("content");
    if (content != message.end() && content->is_string()) {
        out.text = content->get<std::string>();
    } else if (content != message.end() && content->is_array()) {
        for (const auto& part : *content) {
            if (part.is_object() && part.value("type", std::string()) == "text") {
                out.text += part.value("text", std::string());
            }
        }
    }
    if (out.text.empty()) {
        out.status = RawResponse::Status::Malformed;
        out.detail = "empty assistant content";
        return out;
    }
    out.status = RawResponse::Status::Ok;
    return out;
}

std::string resolve_credential(const BackendEndpoint& endpoint) {
    const char* value = std::getenv(endpoint.api_key_env.c_str());
    if (value == nullptr || *value == '\0') {
        throw ConfigError("credential variable " + endpoint.api_key_env + " is not set");
    }
    return value;
}

RawResponse HttpChatBackend::send(const CompletionRequest& request) {
    request.endpoint.validate();
    const std::string key = resolve_credential(request.endpoint);

    const std::string& url = request.endpoint.base_url;
    const auto scheme_end = url.find("://");
    const auto path_start = url.find('/', scheme_end + 3);
    const std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
    std::string path = path_start == std::string::npos ? std::string() : url.substr(path_start);
    while (!path.empty() && path.back() == '/') path.pop_back();
    path += "/chat/completions";

    std::string body;
    try {
        body = build_chat_request_body(request).dump();
    } catch (const DataError& e) {
        RawResponse out;
        out.status = RawResponse::Status::TransportFailure;
        out.retryable = false;
        out.detail = e.what();
        return out;
    }

    httplib::Client client(origin);
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(request.endpoint.timeout);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    client.set_bearer_token_auth(key);

    auto res = client.Post(path, body, "application/json");
    if (!res) {
        RawResponse out;
        out.status = RawResponse::Status::TransportFailure;
        out.detail = "connection error: " + httplib::to_string(res.error());
        return out;
    }
    return parse_chat_response(res->status, res->body);
}

}  // namespace arcade
