#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "arcade/core.hpp"

namespace arcade {

using Seconds = std::chrono::duration<double>;

/// Where one role's requests go. The credential is read from `api_key_env`.
struct BackendEndpoint {
    std::string base_url = "https://api.openai.com/v1";
    std::string api_key_env = "ARCADE_API_KEY";
    std::string model;
    Seconds timeout{120.0};
    /// Send local images as base64 data URLs; URLs are always passed through.
    bool inline_images = true;

    void validate() const;
};

struct RequestPolicy {
    int max_retries = 3;
    std::chrono::milliseconds backoff_base{1000};
    /// Requests per sliding minute; 0 disables limiting.
    int rate_limit = 60;

    /// Delay before retry number `retry` (1-based): base * 2^(retry-1).
    std::chrono::milliseconds backoff_for(int retry) const;
    void validate() const;
};

enum class MessageRole { System, User, Assistant };

std::string_view message_role_name(MessageRole r);

struct TextPart {
    std::string text;
    bool operator==(const TextPart&) const = default;
};

/// Either a locator (path or URL) or already-loaded bytes.
struct ImagePart {
    std::string locator;
    std::string bytes;
    std::string mime_type;
    bool operator==(const ImagePart&) const = default;
};

using ContentPart = std::variant<TextPart, ImagePart>;

struct ChatMessage {
    MessageRole role = MessageRole::User;
    std::vector<ContentPart> parts;

    /// Concatenation of the text parts.
    std::string text() const;
    std::size_t image_count() const;
    /// Throws std::invalid_argument: empty parts, or an image outside a user message.
    void validate() const;

    bool operator==(const ChatMessage&) const = default;
};

enum class FinishKind { Ok, SafetyRefusal, FormatError, TransportError };

std::string_view finish_kind_name(FinishKind k);

struct TokenUsage {
    long long prompt_tokens = 0;
    long long completion_tokens = 0;
    long long total_tokens = 0;
};

struct AgentReply {
    std::string raw_text;
    FinishKind finish_kind = FinishKind::TransportError;
    int attempts_used = 0;
    std::optional<TokenUsage> usage;
    /// Last failure reason, empty on success.
    std::string detail;

    bool ok() const { return finish_kind == FinishKind::Ok; }
};

/// Identifies a logical agent call. The mock keys on (role, sample_id, turn).
struct CallKey {
    std::string role;
    std::string sample_id;
    int turn = 0;
};

struct CompletionRequest {
    std::vector<ChatMessage> messages;
    BackendEndpoint endpoint;
    double temperature = 0.0;
    std::optional<std::uint64_t> seed;
    CallKey key;
    /// 1-based attempt number, filled in by ChatClient.
    int attempt = 1;
};

/// What a single transport attempt produced, before retry policy is applied.
struct RawResponse {
    enum class Status { Ok, ContentFilter, Malformed, TransportFailure };
    Status status = Status::TransportFailure;
    std::string text;
    std::optional<TokenUsage> usage;
    std::string detail;
    /// False for failures that will not improve on retry (bad request, auth).
    bool retryable = true;
};

/// One attempt against a model endpoint. Implementations must be thread-safe.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual RawResponse send(const CompletionRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Time

class Clock {
public:
    using time_point = std::chrono::steady_clock::time_point;
    using duration = std::chrono::steady_clock::duration;

    virtual ~Clock() = default;
    virtual time_point now() = 0;
    virtual void sleep_until(time_point t) = 0;
    void sleep_for(duration d) { sleep_until(now() + d); }
};

class SteadyClock final : public Clock {
public:
    time_point now() override { return std::chrono::steady_clock::now(); }
    void sleep_until(time_point t) override;
};

/// Manually driven clock. Sleeping advances time instantly; time never goes back.
class VirtualClock final : public Clock {
public:
    time_point now() override;
    void sleep_until(time_point t) override;
    void advance(duration d);
    /// Sum of all requested sleep durations (for backoff assertions).
    duration total_slept() const;

private:
    mutable std::mutex mu_;
    time_point now_{};
    duration slept_{};
};

SteadyClock& steady_clock_instance();

/// Sliding-window limiter: at most `per_minute` admissions in any 60 s window.
class RateLimiter {
public:
    RateLimiter(int per_minute, Clock& clock);

    /// Blocks until a slot is free, then records the admission.
    void acquire();
    std::vector<Clock::time_point> admissions() const;
    int per_minute() const { return per_minute_; }

private:
    int per_minute_;
    Clock& clock_;
    mutable std::mutex mu_;
    std::deque<Clock::time_point> window_;
    std::vector<Clock::time_point> history_;
};

// ---------------------------------------------------------------------------
// Retrying client

/// Returns an error message when a reply is structurally unusable, nullopt otherwise.
using ReplyValidator = std::function<std::optional<std::string>(const std::string&)>;

/// Phrases that mark a model-side refusal in otherwise successful replies.
std::vector<std::string> default_refusal_patterns();

/// Retries, backoff, rate limiting and refusal classification around a ChatBackend.
class ChatClient {
public:
    ChatClient(std::shared_ptr<ChatBackend> backend, RequestPolicy policy,
               Clock& clock = steady_clock_instance(),
               std::vector<std::string> refusal_patterns = default_refusal_patterns());

    /// Never throws for model or transport failures; those come back in finish_kind.
    /// Throws ConfigError when the request cannot be sent at all.
    AgentReply complete(CompletionRequest request, const ReplyValidator& validate = {});

    const RequestPolicy& policy() const { return policy_; }
    const RateLimiter* rate_limiter() const { return limiter_.get(); }

private:
    bool looks_like_refusal(const std::string& text) const;

    std::shared_ptr<ChatBackend> backend_;
    RequestPolicy policy_;
    Clock& clock_;
    std::vector<std::string> refusal_patterns_;
    std::unique_ptr<RateLimiter> limiter_;
};

// ---------------------------------------------------------------------------
// Mock

/// Canned response for one attempt.
struct ScriptedReply {
    RawResponse::Status status = RawResponse::Status::Ok;
    std::string text;

    static ScriptedReply ok(std::string text) { return {RawResponse::Status::Ok, std::move(text)}; }
    static ScriptedReply content_filter() { return {RawResponse::Status::ContentFilter, {}}; }
    static ScriptedReply malformed(std::string text = {}) {
        return {RawResponse::Status::Malformed, std::move(text)};
    }
    static ScriptedReply transport_failure() { return {RawResponse::Status::TransportFailure, {}}; }
};

/// Replies keyed by (role, sample_id, turn). "*" as sample or turn -1 are wildcards.
/// Each entry lists one reply per attempt; the last one repeats.
class MockScript {
public:
    static constexpr int kAnyTurn = -1;

    void set(const std::string& role, const std::string& sample_id, int turn, std::vector<ScriptedReply> replies);
    void set_fallback(ScriptedReply reply) { fallback_ = std::move(reply); }

    /// Precedence: exact, (role, sample, any turn), (role, any sample, turn), (role, any, any), fallback.
    const ScriptedReply& lookup(const CallKey& key, int attempt) const;

    static MockScript from_json(const nlohmann::json& j);
    static MockScript load(const std::filesystem::path& path);
    nlohmann::json to_json() const;

private:
    using Key = std::tuple<std::string, std::string, int>;
    std::map<Key, std::vector<ScriptedReply>> entries_;
    ScriptedReply fallback_ = ScriptedReply::ok(R"({"label": 0, "explanation": "fallback"})");
};

/// Deterministic offline backend. Immutable after construction.
class MockBackend final : public ChatBackend {
public:
    explicit MockBackend(MockScript script) : script_(std::move(script)) {}
    RawResponse send(const CompletionRequest& request) override;

private:
    const MockScript script_;
};

/// Decorator that records every attempt it forwards.
class RecordingBackend final : public ChatBackend {
public:
    explicit RecordingBackend(std::shared_ptr<ChatBackend> inner) : inner_(std::move(inner)) {}
    RawResponse send(const CompletionRequest& request) override;

    std::vector<CompletionRequest> calls() const;
    std::vector<CompletionRequest> calls_for(const std::string& sample_id) const;
    void clear();

private:
    std::shared_ptr<ChatBackend> inner_;
    mutable std::mutex mu_;
    std::vector<CompletionRequest> calls_;
};

// ---------------------------------------------------------------------------
// HTTP

/// Builds the chat-completions request body. Local images are inlined as data URLs
/// when the endpoint asks for it.
nlohmann::json build_chat_request_body(const CompletionRequest& request);

/// Classifies an HTTP status and body into a RawResponse.
RawResponse parse_chat_response(int http_status, const std::string& body);

/// OpenAI-compatible `/chat/completions` transport.
class HttpChatBackend final : public ChatBackend {
public:
    HttpChatBackend() = default;
    RawResponse send(const CompletionRequest& request) override;
};

/// Throws ConfigError when the endpoint's credential variable is unset or empty.
std::string resolve_credential(const BackendEndpoint& endpoint);

std::string base64_encode(std::string_view bytes);
std::string mime_type_for(const std::filesystem::path& path);

}  // namespace arcade
