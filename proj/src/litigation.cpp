#include "arcade/litigation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace arcade {

using nlohmann::json;

std::string_view track_name(Track t) { return t == Track::FastTrack ? "fast_track" : "deep_dive"; }

std::string_view speaker_name(Speaker s) { return s == Speaker::Prosecutor ? "prosecutor" : "defender"; }

std::string_view termination_name(Termination t) {
    switch (t) {
        case Termination::Verdict: return "verdict";
        case Termination::SummaryDismissal: return "summary_dismissal";
        case Termination::Refusal: return "refusal";
        case Termination::Error: return "error";
    }
    return "?";
}

std::string_view run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::Arcade: return "arcade";
        case RunMode::Baseline: return "baseline";
        case RunMode::Multiround: return "multiround";
    }
    return "?";
}

std::optional<Track> track_from_name(std::string_view s) {
    if (s == "fast_track") return Track::FastTrack;
    if (s == "deep_dive") return Track::DeepDive;
    return std::nullopt;
}

std::optional<Termination> termination_from_name(std::string_view s) {
    for (Termination t : {Termination::Verdict, Termination::SummaryDismissal, Termination::Refusal, Termination::Error}) {
        if (termination_name(t) == s) return t;
    }
    return std::nullopt;
}

std::optional<RunMode> run_mode_from_name(std::string_view s) {
    for (RunMode m : {RunMode::Arcade, RunMode::Baseline, RunMode::Multiround}) {
        if (run_mode_name(m) == s) return m;
    }
    return std::nullopt;
}

std::string Utterance::serialize() const {
    return std::visit([](const auto& p) { return to_json(p).dump(); }, payload);
}

std::string render_transcript(const Transcript& t) {
    if (t.utterances.empty()) {
        return std::string(kNoContext);
    }
    std::string out;
    for (const auto& u : t.utterances) {
        if (!out.empty()) out += "\n\n";
        out += "[Round " + std::to_string(u.turn) + "] ";
        out += u.speaker == Speaker::Prosecutor ? "Prosecutor's Arguments:\n" : "Defense's Rebuttal:\n";
        out += u.serialize();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Audit encoding

json to_json(const Utterance& u) {
    return json{{"turn", u.turn},
                {"speaker", speaker_name(u.speaker)},
                {"payload", std::visit([](const auto& p) { return to_json(p); }, u.payload)}};
}

json to_json(const Transcript& t) {
    json us = json::array();
    for (const auto& u : t.utterances) us.push_back(to_json(u));
    return json{{"track", t.track ? json(track_name(*t.track)) : json(nullptr)},
                {"utterances", std::move(us)},
                {"termination", termination_name(t.termination)}};
}

json to_json(const CaseOutcome& o) {
    json j = to_json(o.transcript);
    j["sample_id"] = o.sample_id;
    j["mode"] = run_mode_name(o.mode);
    j["predicted"] = o.predicted ? json(code_of(*o.predicted)) : json(nullptr);
    j["explanation"] = o.explanation;
    j["refused"] = o.refused;
    j["credible_cues"] = o.credible_cues;
    j["call_count"] = o.call_count;
    j["attempts"] = o.attempts;
    j["wall_time_ms"] = o.wall_time_ms;
    if (!o.error.empty()) j["error"] = o.error;
    return j;
}

Utterance utterance_from_json(const json& j) {
    Utterance u;
    u.turn = j.at("turn").get<int>();
    const std::string speaker = j.at("speaker").get<std::string>();
    if (speaker == "prosecutor") {
        u.speaker = Speaker::Prosecutor;
        u.payload = parse_prosecutor_finding(j.at("payload"));
    } else if (speaker == "defender") {
        u.speaker = Speaker::Defender;
        u.payload = parse_defender_rebuttal(j.at("payload"));
    } else {
        throw DataError("unknown speaker '" + speaker + "'");
    }
    return u;
}

CaseOutcome case_outcome_from_json(const json& j) {
    try {
        CaseOutcome o;
        o.sample_id = j.at("sample_id").get<std::string>();
        auto mode = run_mode_from_name(j.at("mode").get<std::string>());
        if (!mode) throw DataError("unknown mode");
        o.mode = *mode;
        if (const auto& t = j.at("track"); !t.is_null()) {
            o.transcript.track = track_from_name(t.get<std::string>());
            if (!o.transcript.track) throw DataError("unknown track");
        }
        for (const auto& u : j.at("utterances")) o.transcript.utterances.push_back(utterance_from_json(u));
        auto term = termination_from_name(j.at("termination").get<std::string>());
        if (!term) throw DataError("unknown termination");
        o.transcript.termination = *term;
        if (const auto& p = j.at("predicted"); !p.is_null()) {
            o.predicted = category_from_code(p.get<long long>());
            if (!o.predicted) throw DataError("predicted label out of range");
        }
        o.explanation = j.value("explanation", std::string());
        o.refused = j.value("refused", false);
        o.credible_cues = j.value("credible_cues", std::vector<int>{});
        o.call_count = j.value("call_count", 0);
        o.attempts = j.value("attempts", 0);
        o.wall_time_ms = j.value("wall_time_ms", 0LL);
        o.error = j.value("error", std::string());
        if (o.refused && o.predicted) throw DataError("refused case carries a prediction");
        return o;
    } catch (const json::exception& e) {
        throw DataError(std::string("bad audit record: ") + e.what());
    } catch (const SchemaError& e) {
        throw DataError(std::string("bad audit utterance: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Configuration

DebateConfig DebateConfig::profile(std::string_view name) {
    DebateConfig cfg;
    if (name == "mm-hsil") {
        cfg.rounds = 3;
    } else if (name == "fhm") {
        cfg.rounds = 2;
    } else {
        throw ConfigError("unknown profile '" + std::string(name) + "'");
    }
    return cfg;
}

void DebateConfig::validate() const {
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    const std::pair<const AgentConfig*, AgentRole> expected[] = {
        {&gatekeeper, AgentRole::Gatekeeper}, {&prosecutor, AgentRole::Prosecutor}, {&defender, AgentRole::Defender},
        {&judge, AgentRole::Judge},           {&baseline, AgentRole::BaselineClassifier},
    };
    for (const auto& [cfg, role] : expected) {
        if (cfg->role != role) {
            throw ConfigError("agent config for " + std::string(role_name(role)) + " has the wrong role");
        }
        if (cfg->temperature < 0.0 || cfg->temperature > 2.0) {
            throw ConfigError("temperature out of [0, 2] for " + std::string(role_name(role)));
        }
    }
}

json DebateConfig::fingerprint() const {
    auto agent = [](const AgentConfig& a) {
        return json{{"model", a.endpoint.model},
                    {"base_url", a.endpoint.base_url},
                    {"temperature", a.temperature},
                    {"template", a.template_id}};
    };
    json j{{"rounds", rounds},
           {"mode", run_mode_name(mode)},
           {"agents",
            {{"gatekeeper", agent(gatekeeper)},
             {"prosecutor", agent(prosecutor)},
             {"defender", agent(defender)},
             {"judge", agent(judge)},
             {"baseline", agent(baseline)}}}};
    j["seed"] = seed ? json(*seed) : json(nullptr);
    return j;
}

// ---------------------------------------------------------------------------
// Courtroom

namespace {

std::size_t max_cue_count(const Transcript& t) {
    std::size_t n = 0;
    for (const auto& u : t.utterances) {
        if (const auto* f = std::get_if<ProsecutorFinding>(&u.payload)) n = std::max(n, f->cues.size());
    }
    return n;
}

Termination termination_for(FinishKind k) {
    return k == FinishKind::SafetyRefusal ? Termination::Refusal : Termination::Error;
}

}  // namespace

Courtroom::Courtroom(DebateConfig cfg, const PromptRenderer& renderer, ChatClient& client)
    : cfg_(std::move(cfg)), renderer_(renderer), client_(client) {
    cfg_.validate();
}

AgentCall Courtroom::call(const AgentConfig& cfg, const Sample& sample, const PromptContext& ctx, int turn,
                          const ParseContext& parse_ctx, CallTally* tally) const {
    AgentCall c = invoke_agent(client_, renderer_, cfg, sample, ctx, turn, parse_ctx, cfg_.seed);
    if (tally) {
        tally->calls += 1;
        tally->attempts += c.reply.attempts_used;
        if (!c.payload) tally->last_failure = c.error.empty() ? c.reply.detail : c.error;
    }
    return c;
}

GateResult Courtroom::gate(const Sample& sample, CallTally* tally) const {
    AgentCall c = call(cfg_.gatekeeper, sample, {}, 0, {}, tally);
    GateResult r;
    r.status = c.kind();
    if (!c.payload) {
        r.detail = c.reply.detail;
        return r;
    }
    const auto& signal = std::get<GateSignal>(*c.payload);
    r.track = signal.explicit_cues ? Track::FastTrack : Track::DeepDive;
    r.evidence = signal.evidence;
    return r;
}

Transcript Courtroom::run_fast_track(const Sample& sample, CallTally* tally) const {
    Transcript t;
    t.track = Track::FastTrack;

    PromptContext indict_ctx;
    indict_ctx.template_id = cfg_.indict_template;
    indict_ctx.slots = {{"track", std::string(track_name(Track::FastTrack))}};
    ParseContext indict_parse;
    indict_parse.direct_cues_only = true;
    AgentCall indictment = call(cfg_.prosecutor, sample, indict_ctx, 1, indict_parse, tally);
    if (!indictment.payload) {
        t.termination = termination_for(indictment.kind());
        return t;
    }
    t.utterances.push_back({1, Speaker::Prosecutor, std::get<ProsecutorFinding>(*indictment.payload)});

    PromptContext rebut_ctx;
    rebut_ctx.slots = {{"track", std::string(track_name(Track::FastTrack))},
                       {"prosecutor_findings", t.utterances.back().serialize()},
                       {"transcript", std::string(kNoContext)}};
    ParseContext rebut_parse;
    rebut_parse.prosecutor_cue_count = std::get<ProsecutorFinding>(t.utterances.back().payload).cues.size();
    AgentCall rebuttal = call(cfg_.defender, sample, rebut_ctx, 1, rebut_parse, tally);
    if (!rebuttal.payload) {
        t.termination = termination_for(rebuttal.kind());
        return t;
    }
    t.utterances.push_back({1, Speaker::Defender, std::get<DefenderRebuttal>(*rebuttal.payload)});
    t.termination = Termination::Verdict;
    return t;
}

InvestigationResult Courtroom::investigate(const Sample& sample, bool forced, CallTally* tally) const {
    PromptContext ctx;
    ctx.slots = {{"track", std::string(track_name(Track::DeepDive))},
                 {"transcript", std::string(kNoContext)},
                 {"directive", forced ? renderer_.store().get(cfg_.forced_directive_template) : std::string()}};
    AgentCall c = call(cfg_.prosecutor, sample, ctx, 1, {}, tally);
    InvestigationResult r;
    r.status = c.kind();
    if (!c.payload) {
        r.detail = c.reply.detail;
        return r;
    }
    auto finding = std::get<ProsecutorFinding>(*c.payload);
    if (!finding.empty() || forced) {
        r.finding = std::move(finding);
    }
    return r;
}

Transcript Courtroom::run_debate(const Sample& sample, const ProsecutorFinding& opening, CallTally* tally) const {
    if (opening.empty() && cfg_.mode != RunMode::Multiround) {
        throw std::invalid_argument("debate needs a non-empty opening finding");
    }
    const std::string track(track_name(Track::DeepDive));
    Transcript t;
    t.track = Track::DeepDive;

    const Utterance* prev_pros = nullptr;
    const Utterance* prev_def = nullptr;
    t.utterances.reserve(static_cast<std::size_t>(2 * cfg_.rounds));
    for (int k = 1; k <= cfg_.rounds; ++k) {
        // Prosecutor turn k sees (u_{k-1}^pros, u_{k-1}^def); turn 1 is the opening.
        if (k == 1) {
            t.utterances.push_back({1, Speaker::Prosecutor, opening});
        } else {
            PromptContext pctx;
            pctx.slots = {{"track", track},
                          {"directive", std::string()},
                          {"transcript", "Prosecutor (round " + std::to_string(k - 1) + "):\n" + prev_pros->serialize() +
                                             "\n\nDefense (round " + std::to_string(k - 1) + "):\n" +
                                             prev_def->serialize()}};
            AgentCall pc = call(cfg_.prosecutor, sample, pctx, k, {}, tally);
            if (!pc.payload) {
                t.termination = termination_for(pc.kind());
                return t;
            }
            t.utterances.push_back({k, Speaker::Prosecutor, std::get<ProsecutorFinding>(*pc.payload)});
        }
        prev_pros = &t.utterances.back();

        // Defender turn k sees (u_k^pros, u_{k-1}^def).
        PromptContext dctx;
        dctx.slots = {{"track", track},
                      {"prosecutor_findings", prev_pros->serialize()},
                      {"transcript", prev_def ? prev_def->serialize() : std::string(kNoContext)}};
        ParseContext dparse;
        dparse.prosecutor_cue_count = std::get<ProsecutorFinding>(prev_pros->payload).cues.size();
        AgentCall dc = call(cfg_.defender, sample, dctx, k, dparse, tally);
        if (!dc.payload) {
            t.termination = termination_for(dc.kind());
            return t;
        }
        t.utterances.push_back({k, Speaker::Defender, std::get<DefenderRebuttal>(*dc.payload)});
        prev_def = &t.utterances.back();
        prev_pros = &t.utterances[t.utterances.size() - 2];
    }
    t.termination = Termination::Verdict;
    return t;
}

VerdictResult Courtroom::adjudicate(const Sample& sample, const Transcript& transcript, CallTally* tally) const {
    PromptContext ctx;
    ctx.slots = {{"track", transcript.track ? std::string(track_name(*transcript.track)) : std::string(kNoContext)},
                 {"transcript", render_transcript(transcript)}};
    ParseContext parse_ctx;
    parse_ctx.has_transcript = !transcript.utterances.empty();
    parse_ctx.prosecutor_cue_count = max_cue_count(transcript);
    AgentCall c = call(cfg_.judge, sample, ctx, 0, parse_ctx, tally);
    VerdictResult r;
    r.status = c.kind();
    if (c.payload) {
        r.verdict = std::get<JudgeVerdict>(*c.payload);
    } else {
        r.detail = c.reply.detail;
    }
    return r;
}

CaseOutcome Courtroom::finish_with_verdict(const Sample& sample, Transcript transcript, CallTally& tally) const {
    CaseOutcome o;
    o.sample_id = sample.id;
    o.mode = cfg_.mode;
    if (transcript.termination != Termination::Verdict) {
        o.refused = transcript.termination == Termination::Refusal;
        if (!o.refused) o.error = tally.last_failure;
        o.transcript = std::move(transcript);
        return o;
    }
    VerdictResult v = adjudicate(sample, transcript, &tally);
    if (!v.verdict) {
        transcript.termination = termination_for(v.status);
        o.refused = transcript.termination == Termination::Refusal;
        if (!o.refused) o.error = v.detail;
        o.transcript = std::move(transcript);
        return o;
    }
    o.predicted = v.verdict->label;
    o.explanation = v.verdict->explanation;
    o.credible_cues = v.verdict->credible_cue_indices;
    o.transcript = std::move(transcript);
    return o;
}

CaseOutcome Courtroom::run_arcade(const Sample& sample, CallTally& tally) const {
    GateResult g = gate(sample, &tally);
    if (!g.track) {
        CaseOutcome o;
        o.sample_id = sample.id;
        o.mode = cfg_.mode;
        o.transcript.termination = termination_for(g.status);
        o.refused = o.transcript.termination == Termination::Refusal;
        o.error = o.refused ? std::string() : g.detail;
        return o;
    }
    if (*g.track == Track::FastTrack) {
        return finish_with_verdict(sample, run_fast_track(sample, &tally), tally);
    }

    InvestigationResult inv = investigate(sample, false, &tally);
    if (inv.status != FinishKind::Ok) {
        CaseOutcome o;
        o.sample_id = sample.id;
        o.mode = cfg_.mode;
        o.transcript.track = Track::DeepDive;
        o.transcript.termination = termination_for(inv.status);
        o.refused = o.transcript.termination == Termination::Refusal;
        o.error = o.refused ? std::string() : inv.detail;
        return o;
    }
    if (!inv.finding) {
        CaseOutcome o;
        o.sample_id = sample.id;
        o.mode = cfg_.mode;
        o.predicted = HateCategory::NotHate;
        o.explanation = std::string(kDismissalExplanation);
        o.transcript.track = Track::DeepDive;
        o.transcript.termination = Termination::SummaryDismissal;
        return o;
    }
    return finish_with_verdict(sample, run_debate(sample, *inv.finding, &tally), tally);
}

CaseOutcome Courtroom::run_multiround(const Sample& sample, CallTally& tally) const {
    InvestigationResult inv = investigate(sample, true, &tally);
    if (inv.status != FinishKind::Ok || !inv.finding) {
        CaseOutcome o;
        o.sample_id = sample.id;
        o.mode = cfg_.mode;
        o.transcript.track = Track::DeepDive;
        o.transcript.termination = termination_for(inv.status);
        o.refused = o.transcript.termination == Termination::Refusal;
        o.error = o.refused ? std::string() : inv.detail;
        return o;
    }
    return finish_with_verdict(sample, run_debate(sample, *inv.finding, &tally), tally);
}

CaseOutcome Courtroom::run_single_turn(const Sample& sample, CallTally& tally) const {
    BaselineResult b = run_baseline(sample, cfg_.baseline, renderer_, client_);
    tally.calls += 1;
    tally.attempts += b.attempts_used;
    CaseOutcome o;
    o.sample_id = sample.id;
    o.mode = RunMode::Baseline;
    o.refused = b.refused;
    if (b.label) {
        o.predicted = b.label;
        o.explanation = b.explanation;
        o.transcript.termination = Termination::Verdict;
    } else {
        o.transcript.termination = b.refused ? Termination::Refusal : Termination::Error;
        o.error = b.refused ? std::string() : b.explanation;
    }
    return o;
}

CaseOutcome Courtroom::run_case(const Sample& sample) const {
    const auto start = std::chrono::steady_clock::now();
    CallTally tally;
    CaseOutcome o;
    try {
        switch (cfg_.mode) {
            case RunMode::Arcade: o = run_arcade(sample, tally); break;
            case RunMode::Multiround: o = run_multiround(sample, tally); break;
            case RunMode::Baseline: o = run_single_turn(sample, tally); break;
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        o = CaseOutcome{};
        o.sample_id = sample.id;
        o.mode = cfg_.mode;
        o.transcript.termination = Termination::Error;
        o.error = e.what();
    }
    o.call_count = tally.calls;
    o.attempts = tally.attempts;
    o.wall_time_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
    return o;
}

std::vector<CaseOutcome> run_batch(const Courtroom& court, std::span<const Sample> samples, const BatchOptions& opts,
                                   const std::function<void(const CaseOutcome&)>& sink) {
    const std::size_t workers =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::max(opts.workers, 1)), 1, std::max<std::size_t>(samples.size(), 1));
    std::vector<CaseOutcome> results(samples.size());
    std::atomic<std::size_t> next{0};
    std::mutex sink_mu;
    std::exception_ptr failure;
    std::mutex failure_mu;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= samples.size()) return;
            try {
                CaseOutcome o = court.run_case(samples[i]);
                if (!opts.record_wall_time) o.wall_time_ms = 0;
                if (sink) {
                    std::lock_guard lock(sink_mu);
                    sink(o);
                }
                results[i] = std::move(o);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                next.store(samples.size());
                return;
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
    std::sort(results.begin(), results.end(),
              [](const CaseOutcome& a, const CaseOutcome& b) { return a.sample_id < b.sample_id; });
    return results;
}

}  // namespace arcade
