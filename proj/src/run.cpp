#include "arcade/run.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

namespace arcade {

using nlohmann::json;

RunProfile RunProfile::preset(std::string_view name) {
    RunProfile p;
    p.name = std::string(name);
    p.rounds = DebateConfig::profile(name).rounds;
    return p;
}

void RunProfile::apply_json(const json& j) {
    if (!j.is_object()) throw ConfigError("profile must be an object");
    try {
        if (auto it = j.find("profile"); it != j.end()) {
            // A named base preset resets the K default before the remaining keys apply.
            const auto base = preset(it->get<std::string>());
            name = base.name;
            rounds = base.rounds;
        }
        auto str = [&](const char* key, std::string& dst) {
            if (auto it = j.find(key); it != j.end()) dst = it->get<std::string>();
        };
        str("dataset", dataset);
        str("image_root", image_root);
        str("backend_url", backend_url);
        str("judge_model", judge_model);
        str("aux_model", aux_model);
        str("gate_model", gate_model);
        str("out", out_dir);
        str("templates", templates_dir);
        str("mock", mock_script);
        if (auto it = j.find("rounds"); it != j.end()) rounds = it->get<int>();
        if (auto it = j.find("workers"); it != j.end()) workers = it->get<int>();
        if (auto it = j.find("max_retries"); it != j.end()) max_retries = it->get<int>();
        if (auto it = j.find("rate_limit"); it != j.end()) rate_limit = it->get<int>();
        if (auto it = j.find("seed"); it != j.end()) {
            seed = it->is_null() ? std::nullopt : std::optional<std::uint64_t>(it->get<std::uint64_t>());
        }
        if (auto it = j.find("mode"); it != j.end()) {
            auto m = run_mode_from_name(it->get<std::string>());
            if (!m) throw ConfigError("unknown mode '" + it->get<std::string>() + "'");
            mode = *m;
        }
        if (auto it = j.find("api_key_env"); it != j.end()) {
            for (const auto& [role, var] : it->items()) api_key_env[role] = var.get<std::string>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad profile: ") + e.what());
    }
}

void RunProfile::apply_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open profile " + path.string());
    try {
        apply_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError("profile " + path.string() + ": " + e.what());
    }
}

void RunProfile::apply_env(const std::function<std::optional<std::string>(const std::string&)>& lookup) {
    auto set = [&](const char* var, std::string& dst) {
        if (auto v = lookup(var); v && !v->empty()) dst = *v;
    };
    auto set_int = [&](const char* var, int& dst) {
        if (auto v = lookup(var); v && !v->empty()) {
            try {
                dst = std::stoi(*v);
            } catch (const std::exception&) {
                throw ConfigError(std::string(var) + " is not an integer");
            }
        }
    };
    set("ARCADE_DATASET", dataset);
    set("ARCADE_IMAGE_ROOT", image_root);
    set("ARCADE_BACKEND_URL", backend_url);
    set("ARCADE_JUDGE_MODEL", judge_model);
    set("ARCADE_AUX_MODEL", aux_model);
    set("ARCADE_GATE_MODEL", gate_model);
    set_int("ARCADE_ROUNDS", rounds);
    set_int("ARCADE_WORKERS", workers);
    if (auto v = lookup("ARCADE_MODE"); v && !v->empty()) {
        auto m = run_mode_from_name(*v);
        if (!m) throw ConfigError("ARCADE_MODE: unknown mode '" + *v + "'");
        mode = *m;
    }
    for (AgentRole role : kAllRoles) {
        std::string var = "ARCADE_" + std::string(role_name(role)) + "_API_KEY";
        std::transform(var.begin(), var.end(), var.begin(), [](unsigned char c) { return std::toupper(c); });
        if (lookup(var)) api_key_env[std::string(role_name(role))] = var;
    }
}

void RunProfile::validate() const {
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (out_dir.empty()) throw ConfigError("no output directory");
    if (mock_script.empty()) {
        if (judge_model.empty() || aux_model.empty()) throw ConfigError("judge and aux models are required");
        if (backend_url.empty()) throw ConfigError("no backend url");
    }
    request_policy().validate();
}

json RunProfile::to_json() const {
    return json{{"profile", name},
                {"dataset", dataset},
                {"image_root", image_root},
                {"backend_url", backend_url},
                {"judge_model", judge_model},
                {"aux_model", aux_model},
                {"gate_model", gate_model.empty() ? aux_model : gate_model},
                {"rounds", rounds},
                {"mode", run_mode_name(mode)},
                {"workers", workers},
                {"out", out_dir},
                {"seed", seed ? json(*seed) : json(nullptr)},
                {"templates", templates_dir},
                {"mock", mock_script},
                {"max_retries", max_retries},
                {"rate_limit", rate_limit},
                {"api_key_env", api_key_env}};
}

RequestPolicy RunProfile::request_policy() const {
    RequestPolicy p;
    p.max_retries = max_retries;
    p.rate_limit = rate_limit;
    return p;
}

DebateConfig RunProfile::debate_config() const {
    DebateConfig cfg;
    cfg.rounds = rounds;
    cfg.mode = mode;
    cfg.seed = seed;
    auto endpoint = [&](AgentRole role, const std::string& model) {
        BackendEndpoint e;
        e.base_url = backend_url;
        e.model = model;
        if (auto it = api_key_env.find(std::string(role_name(role))); it != api_key_env.end()) {
            e.api_key_env = it->second;
        }
        return e;
    };
    const std::string& gate = gate_model.empty() ? aux_model : gate_model;
    cfg.gatekeeper = AgentConfig::defaults(AgentRole::Gatekeeper, endpoint(AgentRole::Gatekeeper, gate));
    cfg.prosecutor = AgentConfig::defaults(AgentRole::Prosecutor, endpoint(AgentRole::Prosecutor, aux_model));
    cfg.defender = AgentConfig::defaults(AgentRole::Defender, endpoint(AgentRole::Defender, aux_model));
    cfg.judge = AgentConfig::defaults(AgentRole::Judge, endpoint(AgentRole::Judge, judge_model));
    cfg.baseline =
        AgentConfig::defaults(AgentRole::BaselineClassifier, endpoint(AgentRole::BaselineClassifier, judge_model));
    return cfg;
}

std::optional<std::string> process_env(const std::string& name) {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
}

CallPlan plan_calls(const DebateConfig& cfg) {
    const int k = cfg.rounds;
    switch (cfg.mode) {
        case RunMode::Baseline: return {1, 1};
        // Investigation, K-1 further prosecutor turns, K defender turns, judge.
        case RunMode::Multiround: return {1, 2 * k + 1};
        // Gate plus either dismissal (2), fast track (4) or full debate (2K + 2).
        case RunMode::Arcade: return {1, std::max(4, 2 * k + 2)};
    }
    return {};
}

json to_json(const RunSummary& s) {
    return json{{"total", s.total},       {"skipped", s.skipped},     {"ran", s.ran},
                {"verdicts", s.verdicts}, {"dismissals", s.dismissals}, {"refused", s.refused},
                {"errors", s.errors},     {"calls", s.calls},         {"attempts", s.attempts}};
}

std::vector<CaseOutcome> load_outcomes(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open audit log " + path.string());
    std::map<std::string, CaseOutcome> by_id;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error&) {
            spdlog::warn("{}:{}: skipping unparsable audit line", path.string(), lineno);
            continue;
        }
        CaseOutcome o = case_outcome_from_json(j);
        by_id[o.sample_id] = std::move(o);
    }
    std::vector<CaseOutcome> out;
    out.reserve(by_id.size());
    for (auto& [_, o] : by_id) out.push_back(std::move(o));
    return out;
}

namespace {

void write_json_file(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out) throw DataError("cannot write " + path.string());
}

}  // namespace

RunSummary execute_run(const Courtroom& court, std::span<const Sample> samples, const RunOptions& opts) {
    std::filesystem::create_directories(opts.out_dir);
    const auto log_path = opts.out_dir / kTranscriptFile;

    std::map<std::string, CaseOutcome> done;
    if (opts.resume && std::filesystem::exists(log_path)) {
        for (auto& o : load_outcomes(log_path)) {
            if (o.completed()) done.emplace(o.sample_id, std::move(o));
        }
    }

    RunSummary summary;
    std::vector<Sample> pending;
    std::set<std::string> wanted;
    for (const auto& s : samples) {
        summary.total += 1;
        wanted.insert(s.id);
        if (done.count(s.id)) {
            summary.skipped += 1;
        } else {
            pending.push_back(s);
        }
    }
    if (!opts.resume) std::filesystem::remove(log_path);

    json config = opts.config_dump;
    config["debate"] = court.config().fingerprint();
    write_json_file(opts.out_dir / kRunConfigFile, config);

    std::ofstream appender(log_path, std::ios::app);
    if (!appender) throw DataError("cannot open " + log_path.string());
    BatchOptions batch;
    batch.workers = opts.workers;
    batch.record_wall_time = opts.record_wall_time;
    auto fresh = run_batch(court, pending, batch, [&](const CaseOutcome& o) {
        appender << to_json(o).dump() << '\n';
        appender.flush();
    });
    appender.close();
    summary.ran = static_cast<int>(fresh.size());

    for (auto& o : fresh) {
        summary.calls += o.call_count;
        summary.attempts += o.attempts;
        done[o.sample_id] = std::move(o);
    }

    // Rewrite sorted so reruns and worker counts produce the same file.
    const auto tmp = log_path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        for (const auto& [id, o] : done) {
            if (!wanted.count(id)) continue;
            out << to_json(o).dump() << '\n';
            switch (o.transcript.termination) {
                case Termination::Verdict: summary.verdicts += 1; break;
                case Termination::SummaryDismissal: summary.dismissals += 1; break;
                case Termination::Refusal: summary.refused += 1; break;
                case Termination::Error: summary.errors += 1; break;
            }
        }
        if (!out) throw DataError("cannot write " + tmp);
    }
    std::filesystem::rename(tmp, log_path);
    write_json_file(opts.out_dir / kSummaryFile, to_json(summary));
    return summary;
}

}  // namespace arcade
