// arcade: run the courtroom pipeline, score runs, curate datasets, serve the annotation API.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <regex>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "arcade/annotation_server.hpp"
#include "arcade/datakit.hpp"
#include "arcade/dataset.hpp"
#include "arcade/evalharness.hpp"
#include "arcade/run.hpp"

namespace {

using namespace arcade;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitPartial = 3;

struct RunFlags {
    std::string profile;
    std::optional<std::string> dataset, image_root, backend_url, judge_model, aux_model, gate_model, mode, out,
        mock, templates;
    std::optional<int> rounds, workers;
    std::optional<std::uint64_t> seed;
    std::string sweep;
    bool no_resume = false;
};

RunProfile resolve_profile(const RunFlags& f) {
    RunProfile p = RunProfile::preset("mm-hsil");
    if (!f.profile.empty()) {
        if (std::filesystem::is_regular_file(f.profile)) {
            p.apply_file(f.profile);
        } else {
            p = RunProfile::preset(f.profile);
        }
    }
    p.apply_env(process_env);
    if (f.dataset) p.dataset = *f.dataset;
    if (f.image_root) p.image_root = *f.image_root;
    if (f.backend_url) p.backend_url = *f.backend_url;
    if (f.judge_model) p.judge_model = *f.judge_model;
    if (f.aux_model) p.aux_model = *f.aux_model;
    if (f.gate_model) p.gate_model = *f.gate_model;
    if (f.out) p.out_dir = *f.out;
    if (f.mock) p.mock_script = *f.mock;
    if (f.templates) p.templates_dir = *f.templates;
    if (f.rounds) p.rounds = *f.rounds;
    if (f.workers) p.workers = *f.workers;
    if (f.seed) p.seed = *f.seed;
    if (f.mode) {
        auto m = run_mode_from_name(*f.mode);
        if (!m) throw ConfigError("unknown mode '" + *f.mode + "'");
        p.mode = *m;
    }
    p.validate();
    return p;
}

/// "K=1..4" -> {1, 2, 3, 4}.
std::vector<int> parse_sweep(const std::string& spec) {
    static const std::regex re(R"(\s*K\s*=\s*(\d+)\s*\.\.\s*(\d+)\s*)");
    std::smatch m;
    if (!std::regex_match(spec, m, re)) throw ConfigError("--sweep expects K=<from>..<to>");
    const int lo = std::stoi(m[1]), hi = std::stoi(m[2]);
    if (lo < 1 || hi < lo) throw ConfigError("--sweep range must satisfy 1 <= from <= to");
    std::vector<int> ks;
    for (int k = lo; k <= hi; ++k) ks.push_back(k);
    return ks;
}

int cmd_run(const RunFlags& flags, bool dry_run) {
    RunProfile profile = resolve_profile(flags);
    if (profile.dataset.empty()) throw ConfigError("no dataset (use --dataset)");
    const std::vector<int> ks = flags.sweep.empty() ? std::vector<int>{profile.rounds} : parse_sweep(flags.sweep);

    std::vector<Sample> samples;
    try {
        samples = load_dataset(profile.dataset);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }

    if (dry_run) {
        json plan = json::array();
        for (int k : ks) {
            RunProfile p = profile;
            p.rounds = k;
            const CallPlan c = plan_calls(p.debate_config());
            plan.push_back({{"rounds", k},
                            {"out", flags.sweep.empty() ? p.out_dir : p.out_dir + "/K" + std::to_string(k)},
                            {"samples", samples.size()},
                            {"calls_per_sample", {{"min", c.min_per_sample}, {"max", c.max_per_sample}}},
                            {"calls_max_total", c.max_per_sample * static_cast<long long>(samples.size())}});
        }
        std::cout << json{{"config", profile.to_json()}, {"plan", plan}}.dump(2) << "\n";
        return kExitOk;
    }

    const bool mock = !profile.mock_script.empty();
    std::shared_ptr<ChatBackend> backend;
    if (mock) {
        try {
            backend = std::make_shared<MockBackend>(MockScript::load(profile.mock_script));
        } catch (const DataError& e) {
            throw ConfigError(e.what());
        }
    } else {
        const DebateConfig cfg = profile.debate_config();
        for (const AgentConfig* a : {&cfg.gatekeeper, &cfg.prosecutor, &cfg.defender, &cfg.judge, &cfg.baseline}) {
            resolve_credential(a->endpoint);
        }
        backend = std::make_shared<HttpChatBackend>();
    }

    // Scripted replies never need real backoff sleeps.
    VirtualClock virtual_clock;
    Clock& clock = mock ? static_cast<Clock&>(virtual_clock) : steady_clock_instance();
    ChatClient client(backend, profile.request_policy(), clock);
    TemplateStore templates =
        profile.templates_dir.empty() ? TemplateStore::builtin() : TemplateStore::with_overrides(profile.templates_dir);
    PromptRenderer renderer(std::move(templates), profile.image_root);

    int exit_code = kExitOk;
    for (int k : ks) {
        RunProfile p = profile;
        p.rounds = k;
        if (!flags.sweep.empty()) p.out_dir = profile.out_dir + "/K" + std::to_string(k);
        Courtroom court(p.debate_config(), renderer, client);
        RunOptions opts;
        opts.out_dir = p.out_dir;
        opts.workers = p.workers;
        opts.record_wall_time = !mock;
        opts.resume = !flags.no_resume;
        opts.config_dump = p.to_json();
        const RunSummary s = execute_run(court, samples, opts);
        std::printf("%s: %d samples, %d skipped, %d verdicts, %d dismissals, %d refused, %d errors, %d calls\n",
                    p.out_dir.c_str(), s.total, s.skipped, s.verdicts, s.dismissals, s.refused, s.errors, s.calls);
        if (s.exit_code() != 0) exit_code = kExitPartial;
    }
    return exit_code;
}

int cmd_eval(const std::string& run_dir, const std::string& gold_path, const std::string& task_name,
             std::string out_dir, bool dry_run) {
    const auto task = eval_task_from_name(task_name);
    if (!task) throw ConfigError("--task must be fine, binary or both");
    if (out_dir.empty()) out_dir = run_dir;
    const auto log = std::filesystem::path(run_dir) / kTranscriptFile;
    if (dry_run) {
        std::cout << json{{"run", run_dir}, {"gold", gold_path}, {"task", task_name}, {"out", out_dir}}.dump(2) << "\n";
        return kExitOk;
    }
    std::vector<CaseOutcome> outcomes;
    std::vector<Sample> gold;
    try {
        outcomes = load_outcomes(log);
        gold = load_dataset(gold_path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    json fingerprint = json::object();
    if (std::ifstream cfg(std::filesystem::path(run_dir) / kRunConfigFile); cfg) {
        try {
            fingerprint = json::parse(cfg).value("debate", json::object());
        } catch (const json::parse_error&) {
            spdlog::warn("unreadable {}, report carries no fingerprint", kRunConfigFile);
        }
    }
    std::vector<PredictionRecord> records;
    try {
        records = join_predictions(outcomes, gold);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    const MetricsReport report = build_report(records, *task, fingerprint);
    std::filesystem::create_directories(out_dir);
    const std::pair<ReportFormat, const char*> files[] = {
        {ReportFormat::Structured, "metrics.json"}, {ReportFormat::Csv, "metrics.csv"}, {ReportFormat::Table, "metrics.txt"}};
    for (const auto& [fmt, name] : files) {
        std::ofstream out(std::filesystem::path(out_dir) / name, std::ios::trunc);
        out << export_report(report, fmt);
    }
    std::cout << export_report(report, ReportFormat::Table);
    return report.n_error > 0 ? kExitPartial : kExitOk;
}

int cmd_filter(const std::string& in, const std::string& out, const std::string& queue_path,
               const std::string& report_path, bool dry_run) {
    std::vector<Sample> samples;
    try {
        samples = load_dataset(in);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    const FilterResult r = filter_pipeline(samples);
    std::cout << render_filter_report(r.report);
    if (dry_run) return kExitOk;
    write_dataset(out, r.kept);
    if (!queue_path.empty()) write_dataset(queue_path, r.queue);
    if (!report_path.empty()) {
        std::ofstream rep(report_path, std::ios::trunc);
        rep << to_json(r.report).dump(2) << "\n";
    }
    return kExitOk;
}

int cmd_stats(const std::string& in, bool as_json) {
    std::vector<Sample> samples;
    try {
        samples = load_dataset(in);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    const StratTable table = stratify(samples);
    std::vector<LabelTriple> triples;
    std::array<std::vector<std::pair<HateCategory, HateCategory>>, 3> pairs;
    for (const auto& s : samples) {
        if (s.annotators.size() != 3) continue;
        const LabelTriple t{s.annotators[0].label, s.annotators[1].label, s.annotators[2].label};
        triples.push_back(t);
        pairs[0].push_back({t[0], t[1]});
        pairs[1].push_back({t[0], t[2]});
        pairs[2].push_back({t[1], t[2]});
    }
    json kappas{{"items", triples.size()}, {"fleiss", nullptr}, {"cohen", json::array()}};
    if (!triples.empty()) {
        const auto f = fleiss_kappa(rating_matrix(triples));
        kappas["fleiss"] = f ? json(*f) : json(nullptr);
        for (const auto& p : pairs) kappas["cohen"].push_back(cohen_kappa(p));
    }
    if (as_json) {
        std::cout << json{{"strata", to_json(table)}, {"agreement", kappas}}.dump(2) << "\n";
        return kExitOk;
    }
    std::cout << render_strat_table(table);
    if (!triples.empty()) {
        std::printf("annotated items: %zu\nfleiss kappa: %s\n", triples.size(),
                    kappas["fleiss"].is_null() ? "n/a" : std::to_string(kappas["fleiss"].get<double>()).c_str());
        const char* names[] = {"1-2", "1-3", "2-3"};
        for (int i = 0; i < 3; ++i) std::printf("cohen kappa %s: %.4f\n", names[i], kappas["cohen"][i].get<double>());
    }
    return kExitOk;
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

int cmd_inject(const std::string& in, const std::string& out, const std::string& lexicon_path, std::uint64_t seed,
               bool dry_run) {
    std::vector<Sample> samples;
    Lexicon lexicon;
    try {
        samples = load_dataset(in);
        lexicon = Lexicon::load(lexicon_path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    int replaced = 0;
    for (auto& s : samples) {
        if (s.text.find(kInsultMarker) == std::string::npos) continue;
        if (!s.target_group) throw DataError("sample '" + s.id + "' has a placeholder but no target_group");
        s.text = substitute_placeholder(s.text, *s.target_group, lexicon, seed ^ fnv1a(s.id));
        ++replaced;
    }
    std::printf("%d of %zu samples substituted\n", replaced, samples.size());
    if (!dry_run) write_dataset(out, samples);
    return kExitOk;
}

AnnotationServer* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

int cmd_serve(const std::string& host, int port, const std::string& roster_path, const std::string& data_dir,
              const std::string& tasks_path, const std::string& static_dir, const std::vector<std::string>& runs,
              bool dry_run) {
    Roster roster;
    try {
        roster = Roster::load(roster_path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    if (dry_run) {
        std::cout << json{{"host", host},   {"port", port},         {"roster", roster_path}, {"accounts", roster.size()},
                          {"data", data_dir}, {"tasks", tasks_path}, {"static", static_dir}, {"transcripts", runs}}
                         .dump(2)
                  << "\n";
        return kExitOk;
    }
    AnnotationStore store(std::move(roster), data_dir);
    if (!tasks_path.empty()) {
        auto tasks = AnnotationStore::read_task_file(tasks_path);
        std::vector<AnnotationTask> fresh;
        for (auto& t : tasks) {
            if (!store.get(t.id())) fresh.push_back(std::move(t));
        }
        if (!fresh.empty()) store.import_tasks(std::move(fresh));
    }
    TranscriptIndex transcripts;
    for (const auto& r : runs) transcripts.add(r);

    ServerOptions opts;
    opts.host = host;
    opts.port = port;
    opts.static_dir = static_dir;
    AnnotationServer server(store, transcripts, opts);
    const int bound = server.bind();
    std::printf("listening on http://%s:%d\n", host.c_str(), bound);
    std::fflush(stdout);
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    server.serve();
    g_server = nullptr;
    store.snapshot();
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"arcade: courtroom-style multimodal hate speech detection"};
    app.require_subcommand(1);
    bool dry_run = false;
    bool verbose = false;
    app.add_flag("--dry-run", dry_run, "Print the resolved configuration and planned work, then exit");
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    RunFlags rf;
    auto* run = app.add_subcommand("run", "Run detection over a dataset");
    run->add_option("--profile", rf.profile, "Preset (mm-hsil, fhm) or profile JSON file");
    run->add_option("--dataset", rf.dataset, "Dataset (JSON lines)");
    run->add_option("--image-root", rf.image_root, "Directory relative image paths resolve against");
    run->add_option("--backend-url", rf.backend_url, "OpenAI-compatible base URL");
    run->add_option("--judge-model", rf.judge_model, "Judge model (also used by baseline mode)");
    run->add_option("--aux-model", rf.aux_model, "Prosecutor and defender model");
    run->add_option("--gate-model", rf.gate_model, "Gatekeeper model (defaults to the aux model)");
    run->add_option("--rounds", rf.rounds, "Debate rounds K")->check(CLI::PositiveNumber);
    run->add_option("--mode", rf.mode, "arcade | baseline | multiround");
    run->add_option("--workers", rf.workers, "Concurrent cases")->check(CLI::PositiveNumber);
    run->add_option("--mock", rf.mock, "Scripted mock backend file");
    run->add_option("--out", rf.out, "Run directory");
    run->add_option("--seed", rf.seed, "Sampling seed forwarded to the backend");
    run->add_option("--templates", rf.templates, "Directory of prompt template overrides");
    run->add_option("--sweep", rf.sweep, "Round sweep, e.g. K=1..4 (one run directory per K)");
    run->add_flag("--no-resume", rf.no_resume, "Discard existing outcomes in the run directory");

    std::string eval_run, eval_gold, eval_task = "both", eval_out;
    auto* eval = app.add_subcommand("eval", "Score a run against gold labels");
    eval->add_option("--run", eval_run, "Run directory")->required();
    eval->add_option("--dataset", eval_gold, "Gold dataset")->required();
    eval->add_option("--task", eval_task, "fine | binary | both");
    eval->add_option("--out", eval_out, "Report directory (defaults to the run directory)");

    std::string f_in, f_out, f_queue, f_report;
    auto* filter = app.add_subcommand("filter", "Consensus filtering of a triple-annotated dataset");
    filter->add_option("--in", f_in, "Raw dataset")->required();
    filter->add_option("--out", f_out, "Curated dataset")->required();
    filter->add_option("--queue", f_queue, "Write samples awaiting adjudication here");
    filter->add_option("--report", f_report, "Write the filter report as JSON");

    std::string s_in;
    bool s_json = false;
    auto* stats = app.add_subcommand("stats", "Pattern and difficulty strata plus agreement");
    stats->add_option("--dataset", s_in, "Dataset")->required();
    stats->add_flag("--json", s_json, "Structured output");

    std::string i_in, i_out, i_lex;
    std::uint64_t i_seed = 0;
    auto* inject = app.add_subcommand("inject", "Fill <insult> placeholders from a lexicon");
    inject->add_option("--in", i_in, "Dataset")->required();
    inject->add_option("--out", i_out, "Output dataset")->required();
    inject->add_option("--lexicon", i_lex, "Lexicon JSON {group: [expressions]}")->required();
    inject->add_option("--seed", i_seed, "Seed");

    std::string v_host = "127.0.0.1", v_roster, v_data = "annotation-data", v_tasks, v_static;
    int v_port = 8080;
    std::vector<std::string> v_runs;
    auto* serve = app.add_subcommand("serve", "Annotation service and console host");
    serve->add_option("--host", v_host, "Bind address");
    serve->add_option("--port", v_port, "Port (0 picks a free one)");
    serve->add_option("--roster", v_roster, "Roster JSON")->required();
    serve->add_option("--data-dir", v_data, "Event log and snapshot directory");
    serve->add_option("--tasks", v_tasks, "Task file to import (existing ids are skipped)");
    serve->add_option("--static", v_static, "Console bundle directory");
    serve->add_option("--transcripts", v_runs, "Run directories served under /api/transcripts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        if (*run) return cmd_run(rf, dry_run);
        if (*eval) return cmd_eval(eval_run, eval_gold, eval_task, eval_out, dry_run);
        if (*filter) return cmd_filter(f_in, f_out, f_queue, f_report, dry_run);
        if (*stats) return cmd_stats(s_in, s_json);
        if (*inject) return cmd_inject(i_in, i_out, i_lex, i_seed, dry_run);
        if (*serve) return cmd_serve(v_host, v_port, v_roster, v_data, v_tasks, v_static, v_runs, dry_run);
    } catch (const ConfigError& e) {
        spdlog::error("{}", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return kExitOk;
}
