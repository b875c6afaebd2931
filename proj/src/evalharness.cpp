#include "arcade/evalharness.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace arcade {

using nlohmann::json;

std::vector<PredictionRecord> join_predictions(std::span<const CaseOutcome> outcomes, std::span<const Sample> gold) {
    std::map<std::string, const Sample*> by_id;
    for (const auto& s : gold) by_id[s.id] = &s;

    std::vector<std::string> unknown;
    std::set<std::string> seen;
    std::vector<PredictionRecord> out;
    out.reserve(outcomes.size());
    for (const auto& o : outcomes) {
        auto it = by_id.find(o.sample_id);
        if (it == by_id.end()) {
            unknown.push_back(o.sample_id);
            continue;
        }
        if (!seen.insert(o.sample_id).second) throw DataError("duplicate outcome for sample '" + o.sample_id + "'");
        const Sample& s = *it->second;
        if (!s.gold) throw DataError("gold sample '" + s.id + "' has no annotation");
        PredictionRecord r;
        r.sample_id = o.sample_id;
        r.gold = s.gold->y_combined;
        r.refused = o.refused;
        r.predicted = o.refused ? std::nullopt : o.predicted;
        r.errored = !o.refused && !o.predicted;
        r.pattern = pattern_of(*s.gold);
        r.difficulty = difficulty_of(r.pattern);
        r.mode = o.mode;
        out.push_back(std::move(r));
    }
    std::vector<std::string> missing;
    for (const auto& s : gold) {
        if (!seen.count(s.id)) missing.push_back(s.id);
    }
    if (!unknown.empty() || !missing.empty()) {
        std::string msg = "gold/run id mismatch;";
        auto list = [&](const char* what, const std::vector<std::string>& ids) {
            if (ids.empty()) return;
            msg += std::string(" ") + what + ":";
            for (const auto& id : ids) msg += " " + id;
            msg += ";";
        };
        list("not in gold", unknown);
        list("no outcome", missing);
        throw DataError(msg);
    }
    std::sort(out.begin(), out.end(),
              [](const PredictionRecord& a, const PredictionRecord& b) { return a.sample_id < b.sample_id; });
    return out;
}

namespace {

std::size_t slot(Difficulty d) { return static_cast<std::size_t>(d); }

std::optional<double> ratio(int num, int den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / den;
}

struct Accuracies {
    std::array<int, 3> correct{};
    std::array<SubsetCount, 3> subsets{};
    int correct_all = 0;
    int scored_all = 0;
};

template <typename Eq>
Accuracies accuracies(std::span<const PredictionRecord> records, Eq eq) {
    Accuracies a;
    for (const auto& r : records) {
        auto& sub = a.subsets[slot(r.difficulty)];
        sub.total += 1;
        if (!r.scorable()) continue;
        sub.scored += 1;
        a.scored_all += 1;
        if (eq(r.gold, *r.predicted)) {
            a.correct[slot(r.difficulty)] += 1;
            a.correct_all += 1;
        }
    }
    return a;
}

}  // namespace

Task1Block task1_metrics(std::span<const PredictionRecord> records) {
    Task1Block b;
    const Accuracies a = accuracies(records, [](HateCategory g, HateCategory p) { return g == p; });
    b.subsets = a.subsets;
    b.acc_easy = ratio(a.correct[0], a.subsets[0].scored);
    b.acc_normal = ratio(a.correct[1], a.subsets[1].scored);
    b.acc_hard = ratio(a.correct[2], a.subsets[2].scored);
    b.acc_overall = ratio(a.correct_all, a.scored_all);
    if (a.scored_all == 0) return b;

    std::array<int, kCategoryCount> tp{}, pred{}, support{};
    for (const auto& r : records) {
        if (!r.scorable()) continue;
        const auto g = static_cast<std::size_t>(code_of(r.gold));
        const auto p = static_cast<std::size_t>(code_of(*r.predicted));
        support[g] += 1;
        pred[p] += 1;
        if (g == p) tp[g] += 1;
    }
    double macro = 0.0, weighted = 0.0;
    int classes = 0;
    for (std::size_t c = 0; c < kCategoryCount; ++c) {
        if (support[c] == 0 && pred[c] == 0) continue;
        // F1 = 2TP / (2TP + FP + FN) = 2TP / (pred + support); zero when TP is zero.
        const double f1 = 2.0 * tp[c] / static_cast<double>(pred[c] + support[c]);
        macro += f1;
        weighted += f1 * support[c];
        classes += 1;
    }
    b.macro_f1 = macro / classes;
    b.weighted_f1 = weighted / a.scored_all;
    return b;
}

Task2Block task2_metrics(std::span<const PredictionRecord> records) {
    Task2Block b;
    const Accuracies a =
        accuracies(records, [](HateCategory g, HateCategory p) { return binarize(g) == binarize(p); });
    b.subsets = a.subsets;
    b.acc_easy = ratio(a.correct[0], a.subsets[0].scored);
    b.acc_normal = ratio(a.correct[1], a.subsets[1].scored);
    b.acc_hard = ratio(a.correct[2], a.subsets[2].scored);
    b.acc_overall = ratio(a.correct_all, a.scored_all);
    for (const auto& r : records) {
        if (!r.scorable()) continue;
        const bool g = binarize(r.gold), p = binarize(*r.predicted);
        if (g && p) b.tp += 1;
        else if (!g && p) b.fp += 1;
        else if (g && !p) b.fn += 1;
        else b.tn += 1;
    }
    b.recall = ratio(b.tp, b.tp + b.fn);
    if (b.tp + b.fn > 0) b.f1 = 2.0 * b.tp / static_cast<double>(2 * b.tp + b.fp + b.fn);
    return b;
}

RefusalBlock refusal_stats(std::span<const PredictionRecord> records) {
    RefusalBlock b;
    for (const auto& r : records) {
        const auto p = static_cast<std::size_t>(r.pattern.index());
        b.n_input += 1;
        b.pattern_totals[p] += 1;
        if (r.refused) {
            b.count += 1;
            b.per_pattern[p] += 1;
        }
    }
    b.rate = b.n_input == 0 ? 0.0 : static_cast<double>(b.count) / b.n_input;
    return b;
}

std::string percent(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
    return buf;
}

std::optional<EvalTask> eval_task_from_name(std::string_view s) {
    if (s == "fine") return EvalTask::Fine;
    if (s == "binary") return EvalTask::Binary;
    if (s == "both") return EvalTask::Both;
    return std::nullopt;
}

MetricsReport build_report(std::span<const PredictionRecord> records, EvalTask task, json fingerprint) {
    MetricsReport r;
    if (task != EvalTask::Binary) r.task1 = task1_metrics(records);
    if (task != EvalTask::Fine) r.task2 = task2_metrics(records);
    r.refusals = refusal_stats(records);
    for (const auto& rec : records) {
        r.n_input += 1;
        if (rec.refused) r.n_refused += 1;
        else if (rec.scorable()) r.n_scored += 1;
        else r.n_error += 1;
    }
    r.fingerprint = std::move(fingerprint);
    return r;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
    const auto& v = j.at(key);
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
}

json subsets_json(const std::array<SubsetCount, 3>& s) {
    json out = json::object();
    for (auto d : {Difficulty::Easy, Difficulty::Normal, Difficulty::Hard}) {
        out[std::string(difficulty_name(d))] = {{"scored", s[slot(d)].scored}, {"total", s[slot(d)].total}};
    }
    return out;
}

std::array<SubsetCount, 3> subsets_from(const json& j) {
    std::array<SubsetCount, 3> s{};
    for (auto d : {Difficulty::Easy, Difficulty::Normal, Difficulty::Hard}) {
        const auto& e = j.at(std::string(difficulty_name(d)));
        s[slot(d)] = {e.at("scored").get<int>(), e.at("total").get<int>()};
    }
    return s;
}

}  // namespace

json to_json(const MetricsReport& r) {
    json j;
    if (r.task1) {
        const auto& t = *r.task1;
        j["task1"] = {{"acc_easy", opt(t.acc_easy)},       {"acc_normal", opt(t.acc_normal)},
                      {"acc_hard", opt(t.acc_hard)},       {"acc_overall", opt(t.acc_overall)},
                      {"macro_f1", opt(t.macro_f1)},       {"weighted_f1", opt(t.weighted_f1)},
                      {"subsets", subsets_json(t.subsets)}};
    } else {
        j["task1"] = nullptr;
    }
    if (r.task2) {
        const auto& t = *r.task2;
        j["task2"] = {{"acc_easy", opt(t.acc_easy)},
                      {"acc_normal", opt(t.acc_normal)},
                      {"acc_hard", opt(t.acc_hard)},
                      {"acc_overall", opt(t.acc_overall)},
                      {"recall", opt(t.recall)},
                      {"f1", opt(t.f1)},
                      {"confusion", {{"tp", t.tp}, {"fp", t.fp}, {"fn", t.fn}, {"tn", t.tn}}},
                      {"subsets", subsets_json(t.subsets)}};
    } else {
        j["task2"] = nullptr;
    }
    json per_pattern = json::object();
    for (const auto& p : kPatternTableOrder) {
        const auto i = static_cast<std::size_t>(p.index());
        per_pattern[p.to_string()] = {{"refused", r.refusals.per_pattern[i]}, {"total", r.refusals.pattern_totals[i]}};
    }
    j["refusals"] = {{"count", r.refusals.count},
                     {"n_input", r.refusals.n_input},
                     {"rate", r.refusals.rate},
                     {"rate_percent", percent(r.refusals.rate)},
                     {"per_pattern", per_pattern}};
    j["n_input"] = r.n_input;
    j["n_scored"] = r.n_scored;
    j["n_refused"] = r.n_refused;
    j["n_error"] = r.n_error;
    j["fingerprint"] = r.fingerprint;
    return j;
}

MetricsReport metrics_report_from_json(const json& j) {
    try {
        MetricsReport r;
        if (const auto& t = j.at("task1"); !t.is_null()) {
            Task1Block b;
            b.acc_easy = opt_from(t, "acc_easy");
            b.acc_normal = opt_from(t, "acc_normal");
            b.acc_hard = opt_from(t, "acc_hard");
            b.acc_overall = opt_from(t, "acc_overall");
            b.macro_f1 = opt_from(t, "macro_f1");
            b.weighted_f1 = opt_from(t, "weighted_f1");
            b.subsets = subsets_from(t.at("subsets"));
            r.task1 = b;
        }
        if (const auto& t = j.at("task2"); !t.is_null()) {
            Task2Block b;
            b.acc_easy = opt_from(t, "acc_easy");
            b.acc_normal = opt_from(t, "acc_normal");
            b.acc_hard = opt_from(t, "acc_hard");
            b.acc_overall = opt_from(t, "acc_overall");
            b.recall = opt_from(t, "recall");
            b.f1 = opt_from(t, "f1");
            const auto& c = t.at("confusion");
            b.tp = c.at("tp").get<int>();
            b.fp = c.at("fp").get<int>();
            b.fn = c.at("fn").get<int>();
            b.tn = c.at("tn").get<int>();
            b.subsets = subsets_from(t.at("subsets"));
            r.task2 = b;
        }
        const auto& rf = j.at("refusals");
        r.refusals.count = rf.at("count").get<int>();
        r.refusals.n_input = rf.at("n_input").get<int>();
        r.refusals.rate = rf.at("rate").get<double>();
        for (const auto& [bits, e] : rf.at("per_pattern").items()) {
            auto p = InteractionPattern::parse(bits);
            if (!p) throw DataError("bad pattern '" + bits + "'");
            r.refusals.per_pattern[static_cast<std::size_t>(p->index())] = e.at("refused").get<int>();
            r.refusals.pattern_totals[static_cast<std::size_t>(p->index())] = e.at("total").get<int>();
        }
        r.n_input = j.at("n_input").get<int>();
        r.n_scored = j.at("n_scored").get<int>();
        r.n_refused = j.at("n_refused").get<int>();
        r.n_error = j.at("n_error").get<int>();
        r.fingerprint = j.value("fingerprint", json::object());
        return r;
    } catch (const json::exception& e) {
        throw DataError(std::string("bad metrics report: ") + e.what());
    }
}

std::optional<ReportFormat> report_format_from_name(std::string_view s) {
    if (s == "structured" || s == "json") return ReportFormat::Structured;
    if (s == "csv") return ReportFormat::Csv;
    if (s == "table") return ReportFormat::Table;
    return std::nullopt;
}

namespace {

using CsvRow = std::pair<std::string, std::string>;

std::string num(const std::optional<double>& v) {
    if (!v) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", *v);
    return buf;
}

std::vector<std::pair<std::string, std::vector<CsvRow>>> csv_sections(const MetricsReport& r) {
    std::vector<std::pair<std::string, std::vector<CsvRow>>> out;
    if (r.task1) {
        const auto& t = *r.task1;
        out.push_back({"task1",
                       {{"acc_easy", num(t.acc_easy)},
                        {"acc_normal", num(t.acc_normal)},
                        {"acc_hard", num(t.acc_hard)},
                        {"acc_overall", num(t.acc_overall)},
                        {"macro_f1", num(t.macro_f1)},
                        {"weighted_f1", num(t.weighted_f1)}}});
    }
    if (r.task2) {
        const auto& t = *r.task2;
        out.push_back({"task2",
                       {{"acc_easy", num(t.acc_easy)},
                        {"acc_normal", num(t.acc_normal)},
                        {"acc_hard", num(t.acc_hard)},
                        {"acc_overall", num(t.acc_overall)},
                        {"recall", num(t.recall)},
                        {"f1", num(t.f1)}}});
    }
    std::vector<CsvRow> ref = {{"count", std::to_string(r.refusals.count)},
                               {"rate", num(r.refusals.rate)}};
    for (const auto& p : kPatternTableOrder) {
        ref.push_back({"pattern_" + p.to_string(),
                       std::to_string(r.refusals.per_pattern[static_cast<std::size_t>(p.index())])});
    }
    out.push_back({"refusals", std::move(ref)});
    out.push_back({"counts",
                   {{"n_input", std::to_string(r.n_input)},
                    {"n_scored", std::to_string(r.n_scored)},
                    {"n_refused", std::to_string(r.n_refused)},
                    {"n_error", std::to_string(r.n_error)}}});
    return out;
}

std::string cell(const std::optional<double>& v) { return v ? percent(*v) : std::string("-"); }

}  // namespace

std::size_t csv_metric_count(const MetricsReport& r) {
    std::size_t n = 0;
    for (const auto& [_, rows] : csv_sections(r)) n += rows.size();
    return n;
}

std::string render_refusal_table(const RefusalBlock& b) {
    std::ostringstream out;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-8s %-8s %8s %8s\n", "diff", "pattern", "refused", "total");
    out << buf;
    for (const auto& p : kPatternTableOrder) {
        const auto i = static_cast<std::size_t>(p.index());
        std::snprintf(buf, sizeof buf, "%-8s %-8s %8d %8d\n", std::string(difficulty_name(difficulty_of(p))).c_str(),
                      p.to_string().c_str(), b.per_pattern[i], b.pattern_totals[i]);
        out << buf;
    }
    out << "refusal rate: " << b.count << "/" << b.n_input << " = " << percent(b.rate) << "%\n";
    return out.str();
}

std::string export_report(const MetricsReport& r, ReportFormat format) {
    switch (format) {
        case ReportFormat::Structured: return to_json(r).dump(2) + "\n";
        case ReportFormat::Csv: {
            std::string out = "section,metric,value\n";
            for (const auto& [section, rows] : csv_sections(r)) {
                for (const auto& [metric, value] : rows) out += section + "," + metric + "," + value + "\n";
            }
            return out;
        }
        case ReportFormat::Table: {
            std::ostringstream out;
            char buf[256];
            std::snprintf(buf, sizeof buf, "%-55s | %s\n", "Task 1", "Task 2");
            out << buf;
            std::snprintf(buf, sizeof buf, "%8s %8s %8s %8s %8s %8s | %8s %8s %8s\n", "Easy", "Normal", "Hard", "Acc",
                          "Mac-F1", "W-F1", "Acc", "Recall", "F1");
            out << buf;
            const Task1Block t1 = r.task1.value_or(Task1Block{});
            const Task2Block t2 = r.task2.value_or(Task2Block{});
            std::snprintf(buf, sizeof buf, "%8s %8s %8s %8s %8s %8s | %8s %8s %8s\n", cell(t1.acc_easy).c_str(),
                          cell(t1.acc_normal).c_str(), cell(t1.acc_hard).c_str(), cell(t1.acc_overall).c_str(),
                          cell(t1.macro_f1).c_str(), cell(t1.weighted_f1).c_str(), cell(t2.acc_overall).c_str(),
                          cell(t2.recall).c_str(), cell(t2.f1).c_str());
            out << buf;
            if (r.task2) {
                std::snprintf(buf, sizeof buf, "task2 by difficulty: Easy %s  Normal %s  Hard %s\n",
                              cell(t2.acc_easy).c_str(), cell(t2.acc_normal).c_str(), cell(t2.acc_hard).c_str());
                out << buf;
            }
            out << "scored " << r.n_scored << " / " << r.n_input << ", refused " << r.n_refused << ", errors "
                << r.n_error << "\n\n";
            out << render_refusal_table(r.refusals);
            return out.str();
        }
    }
    throw std::invalid_argument("unknown report format");
}

}  // namespace arcade
