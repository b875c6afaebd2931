#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include "arcade/dataset.hpp"
#include "arcade/run.hpp"

namespace arcade {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const fs::path kFixtures = ARCADE_FIXTURE_DIR;

class TempDir {
public:
    explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

std::function<std::optional<std::string>(const std::string&)> env(std::map<std::string, std::string> vars) {
    return [vars = std::move(vars)](const std::string& name) -> std::optional<std::string> {
        auto it = vars.find(name);
        if (it == vars.end()) return std::nullopt;
        return it->second;
    };
}

TEST(Profile, PresetFileEnvOrder) {
    RunProfile p = RunProfile::preset("fhm");
    EXPECT_EQ(p.rounds, 2);
    p.apply_json(json{{"rounds", 4}, {"judge_model", "file-judge"}, {"workers", 2}});
    EXPECT_EQ(p.rounds, 4);
    p.apply_env(env({{"ARCADE_ROUNDS", "5"}, {"ARCADE_AUX_MODEL", "env-aux"}, {"ARCADE_JUDGE_API_KEY", "x"}}));
    EXPECT_EQ(p.rounds, 5);
    EXPECT_EQ(p.judge_model, "file-judge");
    EXPECT_EQ(p.aux_model, "env-aux");
    EXPECT_EQ(p.workers, 2);
    EXPECT_EQ(p.api_key_env.at("judge"), "ARCADE_JUDGE_API_KEY");
    EXPECT_NO_THROW(p.validate());

    const DebateConfig cfg = p.debate_config();
    EXPECT_EQ(cfg.rounds, 5);
    EXPECT_EQ(cfg.gatekeeper.endpoint.model, "env-aux");
    EXPECT_EQ(cfg.baseline.endpoint.model, "file-judge");
    EXPECT_EQ(cfg.judge.endpoint.api_key_env, "ARCADE_JUDGE_API_KEY");
    EXPECT_EQ(cfg.defender.endpoint.api_key_env, "ARCADE_API_KEY");
}

TEST(Profile, FileProfileKeyResetsRounds) {
    RunProfile p = RunProfile::preset("mm-hsil");
    p.apply_json(json{{"profile", "fhm"}});
    EXPECT_EQ(p.rounds, 2);
    EXPECT_EQ(p.name, "fhm");
    p.apply_json(json{{"profile", "fhm"}, {"rounds", 6}});
    EXPECT_EQ(p.rounds, 6);
}

TEST(Profile, Errors) {
    EXPECT_THROW(RunProfile::preset("unknown"), ConfigError);
    RunProfile p;
    EXPECT_THROW(p.apply_json(json::array()), ConfigError);
    EXPECT_THROW(p.apply_json(json{{"mode", "tournament"}}), ConfigError);
    EXPECT_THROW(p.apply_json(json{{"rounds", "three"}}), ConfigError);
    EXPECT_THROW(p.apply_env(env({{"ARCADE_ROUNDS", "x"}})), ConfigError);
    EXPECT_THROW(p.apply_env(env({{"ARCADE_MODE", "x"}})), ConfigError);
    p.rounds = 0;
    EXPECT_THROW(p.validate(), ConfigError);
    EXPECT_THROW(p.apply_file("/nonexistent/profile.json"), ConfigError);
}

TEST(Profile, GateModelOverride) {
    RunProfile p;
    p.gate_model = "small";
    EXPECT_EQ(p.debate_config().gatekeeper.endpoint.model, "small");
    EXPECT_EQ(p.to_json()["gate_model"], "small");
}

TEST(Plan, CallsPerMode) {
    DebateConfig c;
    c.rounds = 3;
    EXPECT_EQ(plan_calls(c).max_per_sample, 8);
    EXPECT_EQ(plan_calls(c).min_per_sample, 1);
    c.rounds = 1;
    EXPECT_EQ(plan_calls(c).max_per_sample, 4);
    c.mode = RunMode::Multiround;
    c.rounds = 2;
    EXPECT_EQ(plan_calls(c).max_per_sample, 5);
    c.mode = RunMode::Baseline;
    EXPECT_EQ(plan_calls(c).max_per_sample, 1);
}

// ---------------------------------------------------------------------------

struct MockCourt {
    explicit MockCourt(const MockScript& script, RunMode mode = RunMode::Arcade)
        : client(std::make_shared<MockBackend>(script), policy(), clock), renderer(TemplateStore::builtin()),
          court(config(mode), renderer, client) {}
    static RequestPolicy policy() {
        RequestPolicy p;
        p.rate_limit = 0;
        return p;
    }
    static DebateConfig config(RunMode mode) {
        DebateConfig c;
        c.mode = mode;
        return c;
    }
    VirtualClock clock;
    ChatClient client;
    PromptRenderer renderer;
    Courtroom court;
};

std::vector<std::string> read_lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

TEST(Execute, ResumeSkipsCompletedAndRetriesErrors) {
    TempDir dir("arcade_run_resume");
    const auto samples = load_dataset(kFixtures / "ds24.jsonl");
    MockScript script = MockScript::load(kFixtures / "ds24.mock.json");
    // One sample whose gate output is always malformed.
    script.set("gatekeeper", "p000-a", 0, {ScriptedReply::malformed()});

    RunOptions opts;
    opts.out_dir = dir.path();
    opts.workers = 4;
    opts.record_wall_time = false;
    RunSummary first;
    {
        MockCourt mc(script);
        first = execute_run(mc.court, samples, opts);
    }
    EXPECT_EQ(first.total, 24);
    EXPECT_EQ(first.ran, 24);
    EXPECT_EQ(first.errors, 1);
    EXPECT_EQ(first.exit_code(), 3);
    const auto lines = read_lines(dir.path() / kTranscriptFile);
    ASSERT_EQ(lines.size(), 24u);
    std::vector<std::string> ids;
    for (const auto& line : lines) ids.push_back(json::parse(line).at("sample_id").get<std::string>());
    EXPECT_TRUE(std::is_sorted(ids.begin(), ids.end()));
    EXPECT_TRUE(fs::exists(dir.path() / kRunConfigFile));
    EXPECT_TRUE(fs::exists(dir.path() / kSummaryFile));

    // Fixed script: only the errored case runs again.
    MockCourt fixed(MockScript::load(kFixtures / "ds24.mock.json"));
    const RunSummary second = execute_run(fixed.court, samples, opts);
    EXPECT_EQ(second.skipped, 23);
    EXPECT_EQ(second.ran, 1);
    EXPECT_EQ(second.errors, 0);
    EXPECT_EQ(second.exit_code(), 0);
    EXPECT_EQ(read_lines(dir.path() / kTranscriptFile).size(), 24u);
    EXPECT_EQ(second.verdicts + second.dismissals + second.refused, 24);

    // Without resume, everything runs again.
    opts.resume = false;
    const RunSummary third = execute_run(fixed.court, samples, opts);
    EXPECT_EQ(third.ran, 24);
    EXPECT_EQ(third.skipped, 0);
    const json config = json::parse(std::ifstream(dir.path() / kRunConfigFile));
    EXPECT_EQ(config["debate"]["rounds"], 3);
}

TEST(Execute, LoadOutcomesLastWinsAndSkipsTornLine) {
    TempDir dir("arcade_run_load");
    CaseOutcome a;
    a.sample_id = "a";
    a.transcript.termination = Termination::Error;
    CaseOutcome a2 = a;
    a2.transcript.termination = Termination::SummaryDismissal;
    a2.predicted = HateCategory::NotHate;
    {
        std::ofstream out(dir.path() / "t.jsonl");
        out << to_json(a).dump() << "\n" << to_json(a2).dump() << "\n" << R"({"sample_id": "b", "mo)";
    }
    const auto outs = load_outcomes(dir.path() / "t.jsonl");
    ASSERT_EQ(outs.size(), 1u);
    EXPECT_EQ(outs[0], a2);
    EXPECT_THROW(load_outcomes(dir.path() / "missing.jsonl"), DataError);
}

// ---------------------------------------------------------------------------
// CLI exit codes

int run_cli(const std::string& args) {
    const std::string cmd = std::string(ARCADE_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, RunEvalAndExitCodes) {
    TempDir dir("arcade_cli_codes");
    const std::string ds = (kFixtures / "ds24.jsonl").string();
    const std::string mock = (kFixtures / "ds24.mock.json").string();
    const std::string out = (dir.path() / "run").string();

    EXPECT_EQ(run_cli("run --dataset " + ds + " --mock " + mock + " --out " + out + " --workers 3"), 0);
    EXPECT_TRUE(fs::exists(fs::path(out) / "transcripts.jsonl"));
    EXPECT_EQ(run_cli("eval --run " + out + " --dataset " + ds), 0);
    for (const char* f : {"metrics.json", "metrics.csv", "metrics.txt"}) EXPECT_TRUE(fs::exists(fs::path(out) / f)) << f;
    const json metrics = json::parse(std::ifstream(fs::path(out) / "metrics.json"));
    EXPECT_EQ(metrics["n_input"], 24);

    // Configuration problems exit 2.
    EXPECT_EQ(run_cli("run --mock " + mock + " --out " + out), 2);
    EXPECT_EQ(run_cli("run --dataset /nonexistent.jsonl --mock " + mock + " --out " + out), 2);
    EXPECT_EQ(run_cli("run --dataset " + ds + " --mock " + mock + " --mode tournament --out " + out), 2);
    EXPECT_EQ(run_cli("run --dataset " + ds + " --mock " + mock + " --sweep K=3..1 --out " + out), 2);
    EXPECT_EQ(run_cli("--bogus-flag"), 2);

    // Gold and run ids disagree.
    const fs::path half = dir.path() / "half.jsonl";
    {
        auto samples = load_dataset(ds);
        samples.resize(12);
        write_dataset(half, samples);
    }
    EXPECT_EQ(run_cli("eval --run " + out + " --dataset " + half.string()), 2);

    // A case that fails after retries makes the run partial.
    const fs::path broken = dir.path() / "broken.json";
    std::ofstream(broken) << R"({"fallback": {"status": "malformed"}})";
    EXPECT_EQ(run_cli("run --dataset " + half.string() + " --mock " + broken.string() + " --out " +
                      (dir.path() / "broken").string()),
              3);
}

TEST(Cli, DryRunWritesNothing) {
    TempDir dir("arcade_cli_dry");
    const std::string out = (dir.path() / "never").string();
    EXPECT_EQ(run_cli("--dry-run run --dataset " + (kFixtures / "ds24.jsonl").string() + " --mock " +
                      (kFixtures / "ds24.mock.json").string() + " --sweep K=1..3 --out " + out),
              0);
    EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, SweepWritesOneDirectoryPerK) {
    TempDir dir("arcade_cli_sweep");
    const std::string out = (dir.path() / "sweep").string();
    EXPECT_EQ(run_cli("run --dataset " + (kFixtures / "ds24.jsonl").string() + " --mock " +
                      (kFixtures / "ds24.mock.json").string() + " --sweep K=1..2 --out " + out),
              0);
    for (int k = 1; k <= 2; ++k) {
        const auto cfg = json::parse(std::ifstream(fs::path(out) / ("K" + std::to_string(k)) / "run_config.json"));
        EXPECT_EQ(cfg["debate"]["rounds"], k);
    }
}

TEST(Cli, DatasetTools) {
    TempDir dir("arcade_cli_tools");
    const fs::path raw = dir.path() / "raw.jsonl";
    std::ofstream(raw)
        << R"({"id":"a","text":"x <insult>","image":"a.png","source":"synthetic","split":"train","machine_label":2,)"
        << R"("target_group":"Women","annotators":[{"id":"1","label":2},{"id":"2","label":2},{"id":"3","label":2}]})"
        << "\n"
        << R"({"id":"b","text":"y","image":"b.png","source":"real","split":"train",)"
        << R"("annotators":[{"id":"1","label":0},{"id":"2","label":1},{"id":"3","label":2}]})" << "\n";
    const fs::path lex = dir.path() / "lex.json";
    std::ofstream(lex) << R"({"women": ["EXPR"]})";

    EXPECT_EQ(run_cli("filter --in " + raw.string() + " --out " + (dir.path() / "kept.jsonl").string() + " --report " +
                      (dir.path() / "report.json").string()),
              0);
    EXPECT_EQ(load_dataset(dir.path() / "kept.jsonl").size(), 1u);
    const json report = json::parse(std::ifstream(dir.path() / "report.json"));
    EXPECT_EQ(report["no_consensus"], 1);

    EXPECT_EQ(run_cli("inject --in " + raw.string() + " --out " + (dir.path() / "inj.jsonl").string() +
                      " --lexicon " + lex.string() + " --seed 3"),
              0);
    EXPECT_EQ(load_dataset(dir.path() / "inj.jsonl")[0].text, "x EXPR");

    EXPECT_EQ(run_cli("stats --dataset " + (kFixtures / "ds24.jsonl").string()), 0);
    EXPECT_EQ(run_cli("stats --json --dataset " + (kFixtures / "ds24.jsonl").string()), 0);
}

}  // namespace
}  // namespace arcade
