#include "arcade/agents.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "arcade/dataset.hpp"
#include "builtin_templates.hpp"

namespace arcade {

using nlohmann::json;

std::string_view role_name(AgentRole role) {
    switch (role) {
        case AgentRole::Gatekeeper: return "gatekeeper";
        case AgentRole::Prosecutor: return "prosecutor";
        case AgentRole::Defender: return "defender";
        case AgentRole::Judge: return "judge";
        case AgentRole::BaselineClassifier: return "baseline";
    }
    return "?";
}

std::optional<AgentRole> role_from_name(std::string_view name) {
    for (AgentRole r : kAllRoles) {
        if (role_name(r) == name) return r;
    }
    return std::nullopt;
}

double default_temperature(AgentRole role) {
    switch (role) {
        case AgentRole::Gatekeeper: return 0.0;
        case AgentRole::Prosecutor:
        case AgentRole::Defender: return 0.8;
        case AgentRole::Judge: return 0.1;
        case AgentRole::BaselineClassifier: return 0.0;
    }
    return 0.0;
}

std::string default_template_id(AgentRole role) {
    switch (role) {
        case AgentRole::Gatekeeper: return "gatekeeper";
        case AgentRole::Prosecutor: return "prosecutor_investigate";
        case AgentRole::Defender: return "defender";
        case AgentRole::Judge: return "judge";
        case AgentRole::BaselineClassifier: return "baseline";
    }
    return {};
}

AgentConfig AgentConfig::defaults(AgentRole role, BackendEndpoint endpoint) {
    return AgentConfig{role, std::move(endpoint), default_temperature(role), default_template_id(role)};
}

// ---------------------------------------------------------------------------
// Payload encodings

std::string_view cue_type_name(CueType t) {
    switch (t) {
        case CueType::Direct: return "direct";
        case CueType::Sociocultural: return "sociocultural";
        case CueType::Metaphor: return "metaphor";
    }
    return "?";
}

std::string_view benign_context_name(BenignContext c) {
    switch (c) {
        case BenignContext::Satire: return "satire";
        case BenignContext::SelfDeprecation: return "self_deprecation";
        case BenignContext::Reclamation: return "reclamation";
        case BenignContext::Education: return "education";
        case BenignContext::CounterSpeech: return "counter_speech";
        case BenignContext::Other: return "other";
        case BenignContext::None: return "none";
    }
    return "?";
}

json to_json(const ProsecutorFinding& f) {
    json cues = json::array();
    for (std::size_t i = 0; i < f.cues.size(); ++i) {
        const Cue& c = f.cues[i];
        json jc{{"index", i},
                {"type", cue_type_name(c.type)},
                {"description", c.description},
                {"category", code_of(c.category_guess)}};
        if (c.tenor) jc["tenor"] = *c.tenor;
        if (c.vehicle) jc["vehicle"] = *c.vehicle;
        cues.push_back(std::move(jc));
    }
    return json{{"cues", std::move(cues)}};
}

json to_json(const DefenderRebuttal& d) {
    json rs = json::array();
    for (const auto& r : d.rebuttals) {
        rs.push_back({{"cue_index", r.cue_index},
                      {"refuted", r.refuted},
                      {"grounding", r.grounding},
                      {"benign_context", benign_context_name(r.benign_context)}});
    }
    return json{{"rebuttals", std::move(rs)}};
}

json to_json(const JudgeVerdict& v) {
    return json{{"label", code_of(v.label)}, {"explanation", v.explanation}, {"credible_cues", v.credible_cue_indices}};
}

json to_json(const GateSignal& g) { return json{{"explicit", g.explicit_cues}, {"evidence", g.evidence}}; }

json to_json(const BaselineVerdict& b) {
    return json{{"label", code_of(b.label)}, {"explanation", b.explanation}};
}

// ---------------------------------------------------------------------------
// Envelope extraction

std::optional<json> extract_json_object(std::string_view text) {
    for (std::size_t start = text.find('{'); start != std::string_view::npos; start = text.find('{', start + 1)) {
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        std::size_t end = std::string_view::npos;
        for (std::size_t i = start; i < text.size(); ++i) {
            const char c = text[i];
            if (in_string) {
                if (escaped) {
                    escaped = false;
                } else if (c == '\\') {
                    escaped = true;
                } else if (c == '"') {
                    in_string = false;
                }
                continue;
            }
            if (c == '"') {
                in_string = true;
            } else if (c == '{') {
                ++depth;
            } else if (c == '}') {
                if (--depth == 0) {
                    end = i;
                    break;
                }
            }
        }
        if (end == std::string_view::npos) {
            continue;
        }
        json j = json::parse(text.substr(start, end - start + 1), nullptr, false);
        if (!j.is_discarded() && j.is_object()) {
            return j;
        }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Schema validation

namespace {

const json& field(const json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end()) {
        throw SchemaError(std::string("missing field '") + name + "'");
    }
    return *it;
}

std::string string_field(const json& j, const char* name) {
    const json& v = field(j, name);
    if (!v.is_string()) throw SchemaError(std::string("'") + name + "' must be a string");
    return v.get<std::string>();
}

bool bool_field(const json& j, const char* name) {
    const json& v = field(j, name);
    if (!v.is_boolean()) throw SchemaError(std::string("'") + name + "' must be a boolean");
    return v.get<bool>();
}

int int_field(const json& j, const char* name) {
    const json& v = field(j, name);
    if (!v.is_number_integer()) throw SchemaError(std::string("'") + name + "' must be an integer");
    return v.get<int>();
}

HateCategory label_field(const json& j, const char* name) {
    const json& v = field(j, name);
    if (!v.is_number_integer()) throw SchemaError(std::string("'") + name + "' must be an integer label");
    auto c = category_from_code(v.get<long long>());
    if (!c) throw SchemaError(std::string("'") + name + "' out of range 0..5: " + v.dump());
    return *c;
}

const json& array_field(const json& j, const char* name) {
    const json& v = field(j, name);
    if (!v.is_array()) throw SchemaError(std::string("'") + name + "' must be an array");
    return v;
}

std::optional<std::string> optional_string(const json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw SchemaError(std::string("'") + name + "' must be a string");
    return it->get<std::string>();
}

std::string normalize_token(std::string s) {
    std::string out;
    for (char c : s) {
        if (c == '-' || c == ' ') c = '_';
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

bool blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

void require_object(const json& j) {
    if (!j.is_object()) throw SchemaError("reply must be a JSON object");
}

}  // namespace

GateSignal parse_gate_signal(const json& j) {
    require_object(j);
    GateSignal g;
    g.explicit_cues = bool_field(j, "explicit");
    if (auto it = j.find("evidence"); it != j.end() && !it->is_null()) {
        if (!it->is_array()) throw SchemaError("'evidence' must be an array");
        for (const auto& e : *it) {
            if (!e.is_string()) throw SchemaError("'evidence' entries must be strings");
            g.evidence.push_back(e.get<std::string>());
        }
    }
    return g;
}

ProsecutorFinding parse_prosecutor_finding(const json& j, const ParseContext& ctx) {
    require_object(j);
    const json& cues = array_field(j, "cues");
    if (cues.size() > kMaxCues) {
        throw SchemaError("at most 3 cues allowed, got " + std::to_string(cues.size()));
    }
    ProsecutorFinding f;
    for (const auto& jc : cues) {
        require_object(jc);
        Cue c;
        const std::string type = normalize_token(string_field(jc, "type"));
        if (type == "direct") {
            c.type = CueType::Direct;
        } else if (type == "sociocultural" || type == "socio_cultural") {
            c.type = CueType::Sociocultural;
        } else if (type == "metaphor") {
            c.type = CueType::Metaphor;
        } else {
            throw SchemaError("unknown cue type '" + type + "'");
        }
        if (ctx.direct_cues_only && c.type != CueType::Direct) {
            throw SchemaError("indictment cues must be direct");
        }
        c.description = string_field(jc, "description");
        if (blank(c.description)) throw SchemaError("cue description is empty");
        c.tenor = optional_string(jc, "tenor");
        c.vehicle = optional_string(jc, "vehicle");
        if (c.type == CueType::Metaphor && (!c.tenor || blank(*c.tenor) || !c.vehicle || blank(*c.vehicle))) {
            throw SchemaError("metaphor cue needs tenor and vehicle");
        }
        if (c.type != CueType::Metaphor) {
            c.tenor.reset();
            c.vehicle.reset();
        }
        c.category_guess = label_field(jc, "category");
        f.cues.push_back(std::move(c));
    }
    return f;
}

DefenderRebuttal parse_defender_rebuttal(const json& j, const ParseContext& ctx) {
    require_object(j);
    DefenderRebuttal d;
    for (const auto& jr : array_field(j, "rebuttals")) {
        require_object(jr);
        Rebuttal r;
        r.cue_index = int_field(jr, "cue_index");
        if (r.cue_index < 0 ||
            (ctx.prosecutor_cue_count > 0 && static_cast<std::size_t>(r.cue_index) >= ctx.prosecutor_cue_count)) {
            throw SchemaError("cue_index " + std::to_string(r.cue_index) + " does not reference a prosecutor cue");
        }
        r.refuted = bool_field(jr, "refuted");
        r.grounding = string_field(jr, "grounding");
        if (r.refuted && blank(r.grounding)) {
            throw SchemaError("a refutation needs grounding");
        }
        const std::string ctx_name = normalize_token(string_field(jr, "benign_context"));
        bool matched = false;
        for (BenignContext b : {BenignContext::Satire, BenignContext::SelfDeprecation, BenignContext::Reclamation,
                                BenignContext::Education, BenignContext::CounterSpeech, BenignContext::Other,
                                BenignContext::None}) {
            if (benign_context_name(b) == ctx_name) {
                r.benign_context = b;
                matched = true;
            }
        }
        if (!matched) throw SchemaError("unknown benign_context '" + ctx_name + "'");
        d.rebuttals.push_back(std::move(r));
    }
    return d;
}

JudgeVerdict parse_judge_verdict(const json& j, const ParseContext& ctx) {
    require_object(j);
    JudgeVerdict v;
    v.label = label_field(j, "label");
    v.explanation = string_field(j, "explanation");
    if (auto it = j.find("credible_cues"); it != j.end() && !it->is_null()) {
        if (!it->is_array()) throw SchemaError("'credible_cues' must be an array");
        for (const auto& idx : *it) {
            if (!idx.is_number_integer()) throw SchemaError("'credible_cues' entries must be integers");
            const int i = idx.get<int>();
            if (i < 0 || (ctx.prosecutor_cue_count > 0 && static_cast<std::size_t>(i) >= ctx.prosecutor_cue_count)) {
                throw SchemaError("credible cue " + std::to_string(i) + " does not reference a prosecutor cue");
            }
            v.credible_cue_indices.push_back(i);
        }
    }
    if (ctx.has_transcript && binarize(v.label) && v.credible_cue_indices.empty()) {
        throw SchemaError("hateful verdict without credible cues");
    }
    return v;
}

BaselineVerdict parse_baseline_verdict(const json& j) {
    require_object(j);
    return BaselineVerdict{label_field(j, "label"), string_field(j, "explanation")};
}

ParseOutcome parse_text(AgentRole role, std::string_view text, const ParseContext& ctx) {
    auto obj = extract_json_object(text);
    if (!obj) {
        return ParseFailure{FinishKind::FormatError, "no JSON object in reply"};
    }
    try {
        switch (role) {
            case AgentRole::Gatekeeper: return AgentPayload{parse_gate_signal(*obj)};
            case AgentRole::Prosecutor: return AgentPayload{parse_prosecutor_finding(*obj, ctx)};
            case AgentRole::Defender: return AgentPayload{parse_defender_rebuttal(*obj, ctx)};
            case AgentRole::Judge: return AgentPayload{parse_judge_verdict(*obj, ctx)};
            case AgentRole::BaselineClassifier: return AgentPayload{parse_baseline_verdict(*obj)};
        }
    } catch (const SchemaError& e) {
        return ParseFailure{FinishKind::FormatError, e.what()};
    } catch (const json::exception& e) {
        return ParseFailure{FinishKind::FormatError, e.what()};
    }
    return ParseFailure{FinishKind::FormatError, "unknown role"};
}

ParseOutcome parse_reply(AgentRole role, const AgentReply& reply, const ParseContext& ctx) {
    if (!reply.ok()) {
        return ParseFailure{reply.finish_kind, reply.detail};
    }
    return parse_text(role, reply.raw_text, ctx);
}

ReplyValidator validator_for(AgentRole role, ParseContext ctx) {
    return [role, ctx](const std::string& text) -> std::optional<std::string> {
        auto outcome = parse_text(role, text, ctx);
        if (const auto* failure = std::get_if<ParseFailure>(&outcome)) {
            return failure->message;
        }
        return std::nullopt;
    };
}

// ---------------------------------------------------------------------------
// Templates

TemplateStore TemplateStore::builtin() {
    TemplateStore store;
    for (const auto& [id, text] : detail::builtin_template_texts()) {
        store.set(id, text);
    }
    return store;
}

TemplateStore TemplateStore::with_overrides(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw ConfigError("template directory not found: " + dir.string());
    }
    TemplateStore store = builtin();
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
        std::ifstream in(entry.path());
        std::ostringstream buf;
        buf << in.rdbuf();
        store.set(entry.path().stem().string(), buf.str());
    }
    return store;
}

const std::string& TemplateStore::get(const std::string& id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) {
        throw TemplateError("unknown template '" + id + "'");
    }
    return it->second;
}

std::vector<std::string> TemplateStore::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : templates_) out.push_back(id);
    return out;
}

std::string expand_slots(std::string_view tpl, const std::map<std::string, std::string>& slots) {
    std::string out;
    out.reserve(tpl.size());
    std::size_t pos = 0;
    while (pos < tpl.size()) {
        const auto open = tpl.find("{{", pos);
        if (open == std::string_view::npos) {
            out.append(tpl.substr(pos));
            break;
        }
        const auto close = tpl.find("}}", open + 2);
        if (close == std::string_view::npos) {
            throw TemplateError("unterminated slot at offset " + std::to_string(open));
        }
        out.append(tpl.substr(pos, open - pos));
        const std::string name(tpl.substr(open + 2, close - open - 2));
        auto it = slots.find(name);
        if (it == slots.end()) {
            throw TemplateError("unfilled slot '" + name + "'");
        }
        out.append(it->second);
        pos = close + 2;
    }
    return out;
}

PromptRenderer::PromptRenderer(TemplateStore store, std::filesystem::path image_root)
    : store_(std::move(store)), image_root_(std::move(image_root)) {}

namespace {

std::string schema_id_for(AgentRole role) {
    switch (role) {
        case AgentRole::Gatekeeper: return "schema_gatekeeper";
        case AgentRole::Prosecutor: return "schema_prosecutor";
        case AgentRole::Defender: return "schema_defender";
        case AgentRole::Judge: return "schema_judge";
        case AgentRole::BaselineClassifier: return "schema_baseline";
    }
    return {};
}

std::string trim_trailing_newlines(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
}

}  // namespace

std::vector<ChatMessage> PromptRenderer::render(const AgentConfig& cfg, const Sample& sample,
                                                const PromptContext& ctx) const {
    const std::string& id = ctx.template_id.empty() ? cfg.template_id : ctx.template_id;
    const std::string& tpl = store_.get(id);

    std::map<std::string, std::string> slots = {
        {"core_definition", trim_trailing_newlines(store_.get("core_definition"))},
        {"hate_categories", trim_trailing_newlines(store_.get("hate_categories"))},
        {"output_schema", trim_trailing_newlines(store_.get(schema_id_for(cfg.role)))},
        {"tweet_text", sample.text.empty() ? std::string("[no text]") : sample.text},
    };
    for (const auto& [k, v] : ctx.slots) {
        slots[k] = v;
    }

    const auto sep = tpl.find(kUserSeparator);
    if (sep == std::string::npos) {
        throw TemplateError("template '" + id + "' has no user section");
    }
    std::string system_part = trim_trailing_newlines(tpl.substr(0, sep));
    std::string user_part = tpl.substr(sep + kUserSeparator.size());
    if (!user_part.empty() && user_part.front() == '\n') user_part.erase(0, 1);
    user_part = trim_trailing_newlines(user_part);

    ChatMessage system{MessageRole::System, {TextPart{expand_slots(system_part, slots)}}};
    ChatMessage user{MessageRole::User,
                     {TextPart{expand_slots(user_part, slots)}, ImagePart{resolve_image(sample.image_ref, image_root_), {}, {}}}};
    return {std::move(system), std::move(user)};
}

AgentCall invoke_agent(ChatClient& client, const PromptRenderer& renderer, const AgentConfig& cfg,
                       const Sample& sample, const PromptContext& ctx, int turn, const ParseContext& parse_ctx,
                       std::optional<std::uint64_t> seed) {
    CompletionRequest request;
    request.messages = renderer.render(cfg, sample, ctx);
    request.endpoint = cfg.endpoint;
    request.temperature = cfg.temperature;
    request.seed = seed;
    request.key = CallKey{std::string(role_name(cfg.role)), sample.id, turn};

    AgentCall call;
    call.reply = client.complete(std::move(request), validator_for(cfg.role, parse_ctx));
    auto outcome = parse_reply(cfg.role, call.reply, parse_ctx);
    if (auto* payload = std::get_if<AgentPayload>(&outcome)) {
        call.payload = std::move(*payload);
    } else {
        const auto& failure = std::get<ParseFailure>(outcome);
        call.error = failure.message;
        if (call.reply.ok()) {
            call.reply.finish_kind = FinishKind::FormatError;
            call.reply.detail = failure.message;
        }
    }
    return call;
}

BaselineResult run_baseline(const Sample& sample, const AgentConfig& cfg, const PromptRenderer& renderer,
                            ChatClient& client) {
    if (cfg.role != AgentRole::BaselineClassifier) {
        throw std::invalid_argument("run_baseline needs a BaselineClassifier config");
    }
    AgentCall call = invoke_agent(client, renderer, cfg, sample, {}, 0);
    BaselineResult result;
    result.attempts_used = call.reply.attempts_used;
    result.finish_kind = call.kind();
    if (call.payload) {
        const auto& verdict = std::get<BaselineVerdict>(*call.payload);
        result.label = verdict.label;
        result.explanation = verdict.explanation;
    } else if (call.reply.finish_kind == FinishKind::SafetyRefusal) {
        result.refused = true;
    } else {
        result.explanation = call.reply.detail;
    }
    return result;
}

}  // namespace arcade
