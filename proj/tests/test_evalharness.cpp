#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "arcade/evalharness.hpp"

namespace arcade {
namespace {

HateCategory cat(int code) { return *category_from_code(code); }

// A pattern whose difficulty matches `d`, so refusal and accuracy views agree.
InteractionPattern pattern_for(Difficulty d) {
    switch (d) {
        case Difficulty::Easy: return InteractionPattern{true, true, true};
        case Difficulty::Normal: return InteractionPattern{true, false, false};
        case Difficulty::Hard: return InteractionPattern{false, false, true};
    }
    return {};
}

PredictionRecord scored(const std::string& id, int gold, int pred, Difficulty d) {
    PredictionRecord r;
    r.sample_id = id;
    r.gold = cat(gold);
    r.predicted = cat(pred);
    r.difficulty = d;
    r.pattern = pattern_for(d);
    return r;
}

PredictionRecord refused(const std::string& id, int gold, Difficulty d) {
    PredictionRecord r = scored(id, gold, 0, d);
    r.predicted.reset();
    r.refused = true;
    return r;
}

constexpr auto E = Difficulty::Easy;
constexpr auto N = Difficulty::Normal;
constexpr auto H = Difficulty::Hard;

// Twelve hand-tabulated cases; see the expectations in HandFixture* below.
std::vector<PredictionRecord> fixture12() {
    return {scored("r01", 0, 0, E), scored("r02", 0, 0, E), scored("r03", 0, 1, N), scored("r04", 1, 1, E),
            scored("r05", 1, 2, H), scored("r06", 1, 0, N), scored("r07", 2, 2, E), scored("r08", 2, 2, H),
            scored("r09", 3, 0, H), scored("r10", 3, 3, E), scored("r11", 4, 4, N), scored("r12", 0, 0, H)};
}

TEST(Task1, HandFixtureAccuracies) {
    const auto recs = fixture12();
    const Task1Block b = task1_metrics(recs);
    EXPECT_NEAR(*b.acc_overall, 8.0 / 12.0, 1e-9);
    EXPECT_NEAR(*b.acc_easy, 5.0 / 5.0, 1e-9);
    EXPECT_NEAR(*b.acc_normal, 1.0 / 3.0, 1e-9);
    EXPECT_NEAR(*b.acc_hard, 2.0 / 4.0, 1e-9);
}

TEST(Task1, HandFixtureF1) {
    // Per class F1: c0 2/3, c1 2/5, c2 4/5, c3 2/3, c4 1; c5 absent on both sides.
    // Macro = 53/75. Weighted by support (4,3,2,2,1) = 13/20.
    const auto recs = fixture12();
    const Task1Block b = task1_metrics(recs);
    EXPECT_NEAR(*b.macro_f1, 53.0 / 75.0, 1e-9);
    EXPECT_NEAR(*b.weighted_f1, 13.0 / 20.0, 1e-9);
}

TEST(Task2, HandFixture) {
    // Hateful positive: TP 6, FP 1, FN 2, TN 3.
    const auto recs = fixture12();
    const Task2Block b = task2_metrics(recs);
    EXPECT_EQ(b.tp, 6);
    EXPECT_EQ(b.fp, 1);
    EXPECT_EQ(b.fn, 2);
    EXPECT_EQ(b.tn, 3);
    EXPECT_NEAR(*b.acc_overall, 9.0 / 12.0, 1e-9);
    EXPECT_NEAR(*b.recall, 6.0 / 8.0, 1e-9);
    EXPECT_NEAR(*b.f1, 4.0 / 5.0, 1e-9);
    EXPECT_NEAR(*b.acc_easy, 1.0, 1e-9);
    EXPECT_NEAR(*b.acc_normal, 1.0 / 3.0, 1e-9);
    EXPECT_NEAR(*b.acc_hard, 3.0 / 4.0, 1e-9);
}

TEST(Task2, SmallConfusion) {
    // TP 3, FP 1, FN 2, TN 4: recall 3/5, precision 3/4, F1 2/3.
    std::vector<PredictionRecord> recs = {scored("a", 1, 2, E), scored("b", 2, 2, E), scored("c", 5, 1, E),
                                          scored("d", 0, 3, E), scored("e", 4, 0, E), scored("f", 3, 0, E),
                                          scored("g", 0, 0, E), scored("h", 0, 0, E), scored("i", 0, 0, E),
                                          scored("j", 0, 0, E)};
    const Task2Block b = task2_metrics(recs);
    EXPECT_NEAR(*b.recall, 0.6, 1e-12);
    EXPECT_NEAR(*b.f1, 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(*b.acc_overall, 0.7, 1e-12);
}

TEST(Refusals, ExcludedFromScoringDenominator) {
    // First nine hand records stay scored; three refusals ride along.
    auto recs = fixture12();
    recs.resize(9);
    recs.push_back(refused("x1", 3, E));
    recs.push_back(refused("x2", 1, N));
    recs.push_back(refused("x3", 0, H));
    const Task1Block t1 = task1_metrics(recs);
    int scored_total = 0;
    for (const auto& s : t1.subsets) scored_total += s.scored;
    EXPECT_EQ(scored_total, 9);
    // Correct among r01..r09: r01 r02 r04 r07 r08.
    EXPECT_NEAR(*t1.acc_overall, 5.0 / 9.0, 1e-9);
    const auto report = build_report(recs);
    EXPECT_EQ(report.n_input, 12);
    EXPECT_EQ(report.n_scored, 9);
    EXPECT_EQ(report.n_refused, 3);
    EXPECT_EQ(report.refusals.count, 3);
    EXPECT_NEAR(report.refusals.rate, 3.0 / 12.0, 1e-12);
    // Subset totals keep the pre-exclusion denominators.
    EXPECT_EQ(t1.subsets[0].total, 5);
    EXPECT_EQ(t1.subsets[0].scored, 4);
}

TEST(Refusals, MetricsIgnoreRefusedRecords) {
    auto base = fixture12();
    auto with = base;
    with.push_back(refused("z1", 2, H));
    with.push_back(refused("z2", 0, E));
    with.push_back(refused("z3", 5, N));
    const auto a = task1_metrics(base), b = task1_metrics(with);
    EXPECT_EQ(a.acc_overall, b.acc_overall);
    EXPECT_EQ(a.macro_f1, b.macro_f1);
    EXPECT_EQ(a.weighted_f1, b.weighted_f1);
    EXPECT_EQ(task2_metrics(base).f1, task2_metrics(with).f1);
}

TEST(Refusals, RateFormatCheckValues) {
    EXPECT_EQ(percent(261.0 / 1178.0), "22.16");
    EXPECT_EQ(percent(77.0 / 1178.0), "6.54");
    EXPECT_EQ(percent(0.0), "0.00");
    EXPECT_EQ(percent(1.0), "100.00");
}

TEST(Refusals, PerPatternCounts) {
    std::vector<PredictionRecord> recs;
    const auto p = [](const char* bits) { return *InteractionPattern::parse(bits); };
    auto add = [&](const char* bits, bool refuse) {
        PredictionRecord r;
        r.sample_id = "s" + std::to_string(recs.size());
        r.pattern = p(bits);
        r.difficulty = difficulty_of(r.pattern);
        r.refused = refuse;
        if (!refuse) r.predicted = HateCategory::NotHate;
        recs.push_back(r);
    };
    for (int i = 0; i < 3; ++i) add("111", true);
    for (int i = 0; i < 2; ++i) add("100", true);
    add("110", true);
    add("000", false);
    add("100", false);
    const RefusalBlock b = refusal_stats(recs);
    EXPECT_EQ(b.count, 6);
    EXPECT_EQ(b.n_input, 8);
    EXPECT_EQ(b.per_pattern[7], 3);
    EXPECT_EQ(b.per_pattern[4], 2);
    EXPECT_EQ(b.per_pattern[6], 1);
    EXPECT_EQ(b.pattern_totals[4], 3);
    EXPECT_EQ(b.per_pattern[0], 0);
    const std::string table = render_refusal_table(b);
    EXPECT_NE(table.find("6/8 = 75.00%"), std::string::npos);
}

// Independent oracle: precision/recall harmonic mean per present class.
struct Oracle {
    double acc = 0, macro = 0, weighted = 0;
};

Oracle oracle(const std::vector<PredictionRecord>& recs) {
    std::vector<std::pair<int, int>> pairs;
    for (const auto& r : recs) {
        if (r.predicted && !r.refused) pairs.push_back({code_of(r.gold), code_of(*r.predicted)});
    }
    Oracle o;
    int correct = 0;
    for (auto [g, p] : pairs) correct += g == p;
    o.acc = static_cast<double>(correct) / pairs.size();
    int present = 0;
    for (int c = 0; c < 6; ++c) {
        int tp = 0, fp = 0, fn = 0;
        for (auto [g, p] : pairs) {
            tp += g == c && p == c;
            fp += g != c && p == c;
            fn += g == c && p != c;
        }
        if (tp + fp + fn == 0) continue;
        ++present;
        const double prec = tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0;
        const double rec = tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0;
        const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
        o.macro += f1;
        o.weighted += f1 * (tp + fn);
    }
    o.macro /= present;
    o.weighted /= pairs.size();
    return o;
}

TEST(Task1, RandomFixturesMatchOracle) {
    std::mt19937 rng(99);
    std::uniform_int_distribution<int> label(0, 5), diff(0, 2);
    std::bernoulli_distribution refuse(0.1);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<PredictionRecord> recs;
        for (int i = 0; i < 25; ++i) {
            const auto d = static_cast<Difficulty>(diff(rng));
            const int g = label(rng);
            recs.push_back(refuse(rng) ? refused("r" + std::to_string(i), g, d)
                                       : scored("r" + std::to_string(i), g, rng() % 2 ? g : label(rng), d));
        }
        const auto b = task1_metrics(recs);
        if (!b.acc_overall) continue;
        const Oracle o = oracle(recs);
        EXPECT_NEAR(*b.acc_overall, o.acc, 1e-12);
        EXPECT_NEAR(*b.macro_f1, o.macro, 1e-12);
        EXPECT_NEAR(*b.weighted_f1, o.weighted, 1e-12);
        for (auto v : {b.acc_easy, b.acc_normal, b.acc_hard, b.macro_f1, b.weighted_f1}) {
            if (v) {
                EXPECT_GE(*v, 0.0);
                EXPECT_LE(*v, 1.0);
            }
        }
    }
}

TEST(Task1, EmptySubsetIsAbsent) {
    std::vector<PredictionRecord> recs = {scored("a", 1, 1, E)};
    const auto b = task1_metrics(recs);
    EXPECT_FALSE(b.acc_hard.has_value());
    EXPECT_EQ(*b.acc_easy, 1.0);
}

// ---------------------------------------------------------------------------

Sample gold_sample(const std::string& id, int t, int i, int c) {
    Sample s;
    s.id = id;
    s.gold = MiaAnnotation{cat(t), "", cat(i), "", cat(c)};
    return s;
}

CaseOutcome outcome(const std::string& id, std::optional<int> pred, bool refuse = false) {
    CaseOutcome o;
    o.sample_id = id;
    if (pred) o.predicted = cat(*pred);
    o.refused = refuse;
    o.transcript.termination = refuse ? Termination::Refusal : (pred ? Termination::Verdict : Termination::Error);
    return o;
}

TEST(Join, PairsAndClassifies) {
    std::vector<Sample> gold = {gold_sample("b", 1, 0, 1), gold_sample("a", 0, 0, 2), gold_sample("c", 1, 1, 0)};
    std::vector<CaseOutcome> outs = {outcome("c", std::nullopt), outcome("a", 2), outcome("b", std::nullopt, true)};
    const auto recs = join_predictions(outs, gold);
    ASSERT_EQ(recs.size(), 3u);
    EXPECT_EQ(recs[0].sample_id, "a");
    EXPECT_EQ(recs[0].difficulty, Difficulty::Hard);
    EXPECT_TRUE(recs[0].scorable());
    EXPECT_TRUE(recs[1].refused);
    EXPECT_EQ(recs[1].difficulty, Difficulty::Easy);
    EXPECT_TRUE(recs[2].errored);
    EXPECT_EQ(recs[2].pattern.to_string(), "110");
    const auto r = build_report(recs);
    EXPECT_EQ(r.n_scored + r.n_refused + r.n_error, r.n_input);
    EXPECT_EQ(r.n_error, 1);
}

TEST(Join, MismatchNamesBothSides) {
    std::vector<Sample> gold = {gold_sample("a", 0, 0, 0), gold_sample("b", 0, 0, 0)};
    std::vector<CaseOutcome> outs = {outcome("a", 0), outcome("zz", 0)};
    try {
        join_predictions(outs, gold);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("not in gold: zz"), std::string::npos) << msg;
        EXPECT_NE(msg.find("no outcome: b"), std::string::npos) << msg;
    }
}

// ---------------------------------------------------------------------------

TEST(Export, JsonRoundTrip) {
    auto recs = fixture12();
    recs.push_back(refused("x", 2, H));
    const auto r = build_report(recs, EvalTask::Both, nlohmann::json{{"rounds", 3}});
    const auto back = metrics_report_from_json(nlohmann::json::parse(export_report(r, ReportFormat::Structured)));
    EXPECT_EQ(back, r);
    const auto fine = build_report(recs, EvalTask::Fine);
    EXPECT_FALSE(fine.task2.has_value());
    EXPECT_EQ(metrics_report_from_json(to_json(fine)), fine);
}

TEST(Export, CsvRowsMatchMetricCount) {
    const auto recs = fixture12();
    for (auto task : {EvalTask::Fine, EvalTask::Binary, EvalTask::Both}) {
        const auto r = build_report(recs, task);
        const std::string csv = export_report(r, ReportFormat::Csv);
        std::istringstream in(csv);
        std::string line;
        std::getline(in, line);
        EXPECT_EQ(line, "section,metric,value");
        std::size_t rows = 0;
        while (std::getline(in, line)) {
            ++rows;
            EXPECT_EQ(std::count(line.begin(), line.end(), ','), 2) << line;
        }
        EXPECT_EQ(rows, csv_metric_count(r));
    }
    EXPECT_EQ(csv_metric_count(build_report(recs)), 6u + 6u + 10u + 4u);
}

TEST(Export, TableShowsPercentages) {
    const auto r = build_report(fixture12());
    const std::string table = export_report(r, ReportFormat::Table);
    EXPECT_NE(table.find("Mac-F1"), std::string::npos);
    EXPECT_NE(table.find("66.67"), std::string::npos);  // Task 1 overall accuracy
    EXPECT_NE(table.find("80.00"), std::string::npos);  // Task 2 F1
}

TEST(Export, FormatNames) {
    EXPECT_EQ(report_format_from_name("csv"), ReportFormat::Csv);
    EXPECT_EQ(report_format_from_name("json"), ReportFormat::Structured);
    EXPECT_EQ(report_format_from_name("xml"), std::nullopt);
    EXPECT_EQ(eval_task_from_name("binary"), EvalTask::Binary);
    EXPECT_THROW(export_report(MetricsReport{}, static_cast<ReportFormat>(42)), std::invalid_argument);
}

}  // namespace
}  // namespace arcade
