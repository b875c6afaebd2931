#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "arcade/litigation.hpp"

namespace arcade {

/// Operator-facing run settings. Resolution order: preset, profile file, environment, flags.
struct RunProfile {
    std::string name = "mm-hsil";
    std::string dataset;
    std::string image_root;
    std::string backend_url = BackendEndpoint{}.base_url;
    std::string judge_model = "qwen3-vl-plus";
    std::string aux_model = "qwen3-vl-plus";
    /// Empty means the aux model.
    std::string gate_model;
    int rounds = 3;
    RunMode mode = RunMode::Arcade;
    int workers = 4;
    std::string out_dir = "runs/latest";
    std::optional<std::uint64_t> seed;
    std::string templates_dir;
    std::string mock_script;
    int max_retries = RequestPolicy{}.max_retries;
    int rate_limit = RequestPolicy{}.rate_limit;
    /// Credential variable per role name; roles not listed use ARCADE_API_KEY.
    std::map<std::string, std::string> api_key_env;

    /// "mm-hsil" or "fhm"; throws ConfigError otherwise.
    static RunProfile preset(std::string_view name);
    /// Overlays keys present in a profile file object.
    void apply_json(const nlohmann::json& j);
    void apply_file(const std::filesystem::path& path);
    /// Overlays ARCADE_* variables; `lookup` returns nullopt for unset names.
    void apply_env(const std::function<std::optional<std::string>(const std::string&)>& lookup);

    void validate() const;
    nlohmann::json to_json() const;
    DebateConfig debate_config() const;
    RequestPolicy request_policy() const;
};

std::optional<std::string> process_env(const std::string& name);

struct CallPlan {
    int min_per_sample = 0;
    int max_per_sample = 0;
};

/// Logical calls per case for a configuration, before retries.
CallPlan plan_calls(const DebateConfig& cfg);

struct RunOptions {
    std::filesystem::path out_dir;
    int workers = 4;
    bool record_wall_time = true;
    bool resume = true;
    nlohmann::json config_dump = nlohmann::json::object();
};

struct RunSummary {
    int total = 0;
    int skipped = 0;
    int ran = 0;
    int verdicts = 0;
    int dismissals = 0;
    int refused = 0;
    int errors = 0;
    int calls = 0;
    int attempts = 0;

    /// 0 when every case completed, 3 when some ended in error.
    int exit_code() const { return errors > 0 ? 3 : 0; }
};

nlohmann::json to_json(const RunSummary& s);

inline constexpr const char* kTranscriptFile = "transcripts.jsonl";
inline constexpr const char* kRunConfigFile = "run_config.json";
inline constexpr const char* kSummaryFile = "summary.json";

/// Reads an audit log; the last record per sample wins and a torn trailing line is ignored.
std::vector<CaseOutcome> load_outcomes(const std::filesystem::path& path);

/// Runs every sample not already completed in `out_dir`, appending outcomes as they finish,
/// then rewrites the audit log sorted by sample id.
RunSummary execute_run(const Courtroom& court, std::span<const Sample> samples, const RunOptions& opts);

}  // namespace arcade
