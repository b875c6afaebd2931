#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "arcade/agents.hpp"
#include "arcade/backend.hpp"
#include "arcade/core.hpp"

namespace arcade {

enum class Track { FastTrack, DeepDive };
enum class Speaker { Prosecutor, Defender };
enum class Termination { Verdict, SummaryDismissal, Refusal, Error };
enum class RunMode { Arcade, Baseline, Multiround };

std::string_view track_name(Track t);
std::string_view speaker_name(Speaker s);
std::string_view termination_name(Termination t);
std::string_view run_mode_name(RunMode m);
std::optional<Track> track_from_name(std::string_view s);
std::optional<Termination> termination_from_name(std::string_view s);
std::optional<RunMode> run_mode_from_name(std::string_view s);

/// Explanation attached to every summary dismissal.
inline constexpr std::string_view kDismissalExplanation = "No implicit risks";

struct Utterance {
    int turn = 1;
    Speaker speaker = Speaker::Prosecutor;
    std::variant<ProsecutorFinding, DefenderRebuttal> payload;

    /// Canonical compact JSON of the payload; this exact string is what later prompts embed.
    std::string serialize() const;
    bool operator==(const Utterance&) const = default;
};

struct Transcript {
    /// Absent for baseline cases, which never route.
    std::optional<Track> track;
    std::vector<Utterance> utterances;
    Termination termination = Termination::Verdict;

    bool operator==(const Transcript&) const = default;
};

/// Transcript block shown to the judge: every utterance, in order, with round headers.
std::string render_transcript(const Transcript& t);

struct CaseOutcome {
    std::string sample_id;
    std::optional<HateCategory> predicted;
    std::string explanation;
    bool refused = false;
    Transcript transcript;
    RunMode mode = RunMode::Arcade;
    std::vector<int> credible_cues;
    /// Logical agent calls; retries are counted in `attempts`.
    int call_count = 0;
    int attempts = 0;
    long long wall_time_ms = 0;
    /// Failure detail for error terminations.
    std::string error;

    bool completed() const { return transcript.termination != Termination::Error; }
    bool operator==(const CaseOutcome&) const = default;
};

nlohmann::json to_json(const Utterance& u);
nlohmann::json to_json(const Transcript& t);
nlohmann::json to_json(const CaseOutcome& o);
Utterance utterance_from_json(const nlohmann::json& j);
CaseOutcome case_outcome_from_json(const nlohmann::json& j);

struct DebateConfig {
    int rounds = 3;
    RunMode mode = RunMode::Arcade;
    AgentConfig gatekeeper = AgentConfig::defaults(AgentRole::Gatekeeper);
    AgentConfig prosecutor = AgentConfig::defaults(AgentRole::Prosecutor);
    AgentConfig defender = AgentConfig::defaults(AgentRole::Defender);
    AgentConfig judge = AgentConfig::defaults(AgentRole::Judge);
    AgentConfig baseline = AgentConfig::defaults(AgentRole::BaselineClassifier);
    std::string indict_template = "prosecutor_indict";
    std::string forced_directive_template = "directive_forced";
    std::optional<std::uint64_t> seed;

    /// "mm-hsil" (K=3) or "fhm" (K=2).
    static DebateConfig profile(std::string_view name);
    void validate() const;
    /// Models, temperatures, rounds and mode; enough to reconstruct an ablation row.
    nlohmann::json fingerprint() const;
};

/// Counts logical calls and attempts for one case.
struct CallTally {
    int calls = 0;
    int attempts = 0;
    /// Reason the most recent failed call gave up.
    std::string last_failure;
};

struct GateResult {
    std::optional<Track> track;
    std::vector<std::string> evidence;
    FinishKind status = FinishKind::Ok;
    std::string detail;
};

struct InvestigationResult {
    /// Absent when the investigation found nothing (or failed).
    std::optional<ProsecutorFinding> finding;
    FinishKind status = FinishKind::Ok;
    std::string detail;
};

struct VerdictResult {
    std::optional<JudgeVerdict> verdict;
    FinishKind status = FinishKind::Ok;
    std::string detail;
};

/// Gated dual-track trial over one sample at a time. Cases are independent;
/// one Courtroom may serve many worker threads.
class Courtroom {
public:
    Courtroom(DebateConfig cfg, const PromptRenderer& renderer, ChatClient& client);

    GateResult gate(const Sample& sample, CallTally* tally = nullptr) const;
    Transcript run_fast_track(const Sample& sample, CallTally* tally = nullptr) const;
    /// `forced` asks the prosecutor to argue its best hypothesis (multiround ablation);
    /// a forced investigation returns its finding even when it is empty.
    InvestigationResult investigate(const Sample& sample, bool forced = false, CallTally* tally = nullptr) const;
    /// Turns 1..K; `opening` is the first prosecutor utterance.
    Transcript run_debate(const Sample& sample, const ProsecutorFinding& opening, CallTally* tally = nullptr) const;
    VerdictResult adjudicate(const Sample& sample, const Transcript& transcript, CallTally* tally = nullptr) const;

    /// Never throws for model-side failures; every case yields an outcome.
    CaseOutcome run_case(const Sample& sample) const;

    const DebateConfig& config() const { return cfg_; }

private:
    AgentCall call(const AgentConfig& cfg, const Sample& sample, const PromptContext& ctx, int turn,
                   const ParseContext& parse_ctx, CallTally* tally) const;
    CaseOutcome run_arcade(const Sample& sample, CallTally& tally) const;
    CaseOutcome run_multiround(const Sample& sample, CallTally& tally) const;
    CaseOutcome run_single_turn(const Sample& sample, CallTally& tally) const;
    CaseOutcome finish_with_verdict(const Sample& sample, Transcript transcript, CallTally& tally) const;

    DebateConfig cfg_;
    const PromptRenderer& renderer_;
    ChatClient& client_;
};

struct BatchOptions {
    int workers = 4;
    bool record_wall_time = true;
};

/// Runs every sample on a bounded pool; `sink` is called (serialized) as cases finish.
/// Returns outcomes sorted by sample id.
std::vector<CaseOutcome> run_batch(const Courtroom& court, std::span<const Sample> samples, const BatchOptions& opts,
                                   const std::function<void(const CaseOutcome&)>& sink = {});

}  // namespace arcade
