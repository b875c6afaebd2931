#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "arcade/backend.hpp"
#include "arcade/core.hpp"

namespace arcade {

enum class AgentRole { Gatekeeper, Prosecutor, Defender, Judge, BaselineClassifier };

inline constexpr std::array<AgentRole, 5> kAllRoles = {
    AgentRole::Gatekeeper, AgentRole::Prosecutor, AgentRole::Defender, AgentRole::Judge,
    AgentRole::BaselineClassifier,
};

/// Lowercase wire name ("gatekeeper", ..., "baseline"); also the mock script key.
std::string_view role_name(AgentRole role);
std::optional<AgentRole> role_from_name(std::string_view name);

/// Sampling temperature per role: gate 0.0, prosecutor/defender 0.8, judge 0.1, baseline 0.0.
double default_temperature(AgentRole role);
std::string default_template_id(AgentRole role);

struct AgentConfig {
    AgentRole role = AgentRole::BaselineClassifier;
    BackendEndpoint endpoint;
    double temperature = 0.0;
    std::string template_id;

    static AgentConfig defaults(AgentRole role, BackendEndpoint endpoint = {});
};

// ---------------------------------------------------------------------------
// Structured replies

enum class CueType { Direct, Sociocultural, Metaphor };

std::string_view cue_type_name(CueType t);

struct Cue {
    CueType type = CueType::Direct;
    std::string description;
    std::optional<std::string> tenor;
    std::optional<std::string> vehicle;
    HateCategory category_guess = HateCategory::NotHate;

    bool operator==(const Cue&) const = default;
};

inline constexpr std::size_t kMaxCues = 3;

struct ProsecutorFinding {
    std::vector<Cue> cues;

    bool empty() const { return cues.empty(); }
    bool operator==(const ProsecutorFinding&) const = default;
};

enum class BenignContext { Satire, SelfDeprecation, Reclamation, Education, CounterSpeech, Other, None };

std::string_view benign_context_name(BenignContext c);

struct Rebuttal {
    int cue_index = 0;
    bool refuted = false;
    std::string grounding;
    BenignContext benign_context = BenignContext::None;

    bool operator==(const Rebuttal&) const = default;
};

struct DefenderRebuttal {
    std::vector<Rebuttal> rebuttals;
    bool operator==(const DefenderRebuttal&) const = default;
};

struct JudgeVerdict {
    HateCategory label = HateCategory::NotHate;
    std::string explanation;
    std::vector<int> credible_cue_indices;
    bool operator==(const JudgeVerdict&) const = default;
};

struct GateSignal {
    bool explicit_cues = false;
    std::vector<std::string> evidence;
    bool operator==(const GateSignal&) const = default;
};

struct BaselineVerdict {
    HateCategory label = HateCategory::NotHate;
    std::string explanation;
    bool operator==(const BaselineVerdict&) const = default;
};

// Canonical encodings, used for transcripts and for embedding prior turns in prompts.
nlohmann::json to_json(const ProsecutorFinding& f);
nlohmann::json to_json(const DefenderRebuttal& d);
nlohmann::json to_json(const JudgeVerdict& v);
nlohmann::json to_json(const GateSignal& g);
nlohmann::json to_json(const BaselineVerdict& b);

/// Reply violates the role's schema.
class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// What the validator needs to know about the surrounding case.
struct ParseContext {
    /// Number of cues in the finding being rebutted or judged; 0 means unknown.
    std::size_t prosecutor_cue_count = 0;
    /// The judge has a non-empty transcript, so hateful labels need credible cues.
    bool has_transcript = false;
    /// Fast-track indictments may only carry direct cues.
    bool direct_cues_only = false;
};

/// First JSON object embedded in free text (prose and code fences are skipped).
std::optional<nlohmann::json> extract_json_object(std::string_view text);

GateSignal parse_gate_signal(const nlohmann::json& j);
ProsecutorFinding parse_prosecutor_finding(const nlohmann::json& j, const ParseContext& ctx = {});
DefenderRebuttal parse_defender_rebuttal(const nlohmann::json& j, const ParseContext& ctx = {});
JudgeVerdict parse_judge_verdict(const nlohmann::json& j, const ParseContext& ctx = {});
BaselineVerdict parse_baseline_verdict(const nlohmann::json& j);

using AgentPayload = std::variant<GateSignal, ProsecutorFinding, DefenderRebuttal, JudgeVerdict, BaselineVerdict>;

struct ParseFailure {
    FinishKind kind = FinishKind::FormatError;
    std::string message;
};

using ParseOutcome = std::variant<AgentPayload, ParseFailure>;

/// Validates `reply.raw_text` against the role schema. Non-ok replies pass through as failures.
ParseOutcome parse_reply(AgentRole role, const AgentReply& reply, const ParseContext& ctx = {});
ParseOutcome parse_text(AgentRole role, std::string_view text, const ParseContext& ctx = {});

/// Retry hook for ChatClient: rejects replies that do not parse for `role`.
ReplyValidator validator_for(AgentRole role, ParseContext ctx = {});

// ---------------------------------------------------------------------------
// Templates

class TemplateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Named prompt texts. A role template holds the system prompt, then a line
/// `=== user ===`, then the user prompt. Slots are written `{{name}}`.
class TemplateStore {
public:
    /// The templates compiled into the binary.
    static TemplateStore builtin();
    /// Built-ins overlaid with every `*.txt` file in `dir` (id = file stem).
    static TemplateStore with_overrides(const std::filesystem::path& dir);

    bool contains(const std::string& id) const { return templates_.count(id) > 0; }
    const std::string& get(const std::string& id) const;
    void set(std::string id, std::string text) { templates_[std::move(id)] = std::move(text); }
    std::vector<std::string> ids() const;

private:
    std::map<std::string, std::string> templates_;
};

/// Replaces every `{{slot}}`; throws TemplateError naming the first unfilled slot.
std::string expand_slots(std::string_view tpl, const std::map<std::string, std::string>& slots);

/// Role-specific slot values supplied by the caller.
struct PromptContext {
    std::map<std::string, std::string> slots;
    /// Overrides AgentConfig::template_id when non-empty.
    std::string template_id;
};

inline constexpr std::string_view kUserSeparator = "=== user ===";
inline constexpr std::string_view kNoContext = "(none)";

class PromptRenderer {
public:
    explicit PromptRenderer(TemplateStore store, std::filesystem::path image_root = {});

    /// System message plus one user message carrying the text and exactly one image part.
    std::vector<ChatMessage> render(const AgentConfig& cfg, const Sample& sample, const PromptContext& ctx = {}) const;

    const TemplateStore& store() const { return store_; }
    const std::filesystem::path& image_root() const { return image_root_; }

private:
    TemplateStore store_;
    std::filesystem::path image_root_;
};

/// Result of one logical agent call (after retries).
struct AgentCall {
    AgentReply reply;
    std::optional<AgentPayload> payload;
    /// Set when the reply was ok but failed parsing (should not happen with a validator).
    std::string error;

    FinishKind kind() const { return payload ? FinishKind::Ok : reply.finish_kind; }
};

/// Renders, sends with schema-aware retries, and parses.
AgentCall invoke_agent(ChatClient& client, const PromptRenderer& renderer, const AgentConfig& cfg,
                       const Sample& sample, const PromptContext& ctx, int turn, const ParseContext& parse_ctx = {},
                       std::optional<std::uint64_t> seed = std::nullopt);

struct BaselineResult {
    std::optional<HateCategory> label;
    std::string explanation;
    bool refused = false;
    FinishKind finish_kind = FinishKind::Ok;
    int attempts_used = 0;
};

/// Zero-shot single-turn classification: exactly one logical backend call.
BaselineResult run_baseline(const Sample& sample, const AgentConfig& cfg, const PromptRenderer& renderer,
                            ChatClient& client);

}  // namespace arcade
