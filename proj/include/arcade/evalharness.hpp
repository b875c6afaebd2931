#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "arcade/core.hpp"
#include "arcade/litigation.hpp"

namespace arcade {

struct PredictionRecord {
    std::string sample_id;
    HateCategory gold = HateCategory::NotHate;
    std::optional<HateCategory> predicted;
    bool refused = false;
    /// Neither a prediction nor a refusal: the case failed after retries.
    bool errored = false;
    Difficulty difficulty = Difficulty::Easy;
    InteractionPattern pattern;
    RunMode mode = RunMode::Arcade;

    bool scorable() const { return predicted.has_value() && !refused; }
};

/// Pairs outcomes with gold samples. Throws DataError naming the ids present on only one side.
std::vector<PredictionRecord> join_predictions(std::span<const CaseOutcome> outcomes, std::span<const Sample> gold);

/// Scored / total (scorable + refused + errored) per subset.
struct SubsetCount {
    int scored = 0;
    int total = 0;
    bool operator==(const SubsetCount&) const = default;
};

struct Task1Block {
    std::optional<double> acc_easy, acc_normal, acc_hard, acc_overall;
    std::optional<double> macro_f1, weighted_f1;
    std::array<SubsetCount, 3> subsets{};
    bool operator==(const Task1Block&) const = default;
};

struct Task2Block {
    std::optional<double> acc_easy, acc_normal, acc_hard, acc_overall;
    /// Hateful is the positive class.
    std::optional<double> recall, f1;
    int tp = 0, fp = 0, fn = 0, tn = 0;
    std::array<SubsetCount, 3> subsets{};
    bool operator==(const Task2Block&) const = default;
};

struct RefusalBlock {
    int count = 0;
    int n_input = 0;
    /// count / n_input, 0 when there are no inputs.
    double rate = 0.0;
    /// Indexed by InteractionPattern::index().
    std::array<int, 8> per_pattern{};
    std::array<int, 8> pattern_totals{};
    bool operator==(const RefusalBlock&) const = default;
};

Task1Block task1_metrics(std::span<const PredictionRecord> records);
Task2Block task2_metrics(std::span<const PredictionRecord> records);
RefusalBlock refusal_stats(std::span<const PredictionRecord> records);

/// Percentage with two decimals, e.g. 0.22156 -> "22.16".
std::string percent(double fraction);

enum class EvalTask { Fine, Binary, Both };
std::optional<EvalTask> eval_task_from_name(std::string_view s);

struct MetricsReport {
    std::optional<Task1Block> task1;
    std::optional<Task2Block> task2;
    RefusalBlock refusals;
    int n_input = 0;
    int n_scored = 0;
    int n_refused = 0;
    int n_error = 0;
    nlohmann::json fingerprint;

    bool operator==(const MetricsReport&) const = default;
};

MetricsReport build_report(std::span<const PredictionRecord> records, EvalTask task = EvalTask::Both,
                           nlohmann::json fingerprint = nlohmann::json::object());

nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_report_from_json(const nlohmann::json& j);

enum class ReportFormat { Structured, Csv, Table };
std::optional<ReportFormat> report_format_from_name(std::string_view s);

/// Throws std::invalid_argument for formats outside the enum.
std::string export_report(const MetricsReport& r, ReportFormat format);
/// Rows written by the csv export (header excluded).
std::size_t csv_metric_count(const MetricsReport& r);
/// Refusal counts grouped by difficulty, in table row order.
std::string render_refusal_table(const RefusalBlock& b);

}  // namespace arcade
