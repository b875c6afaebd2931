#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "arcade/core.hpp"

namespace arcade {

enum class ConsensusLevel { Perfect, Strong, Weak, NoConsensus };

std::string_view consensus_name(ConsensusLevel c);
std::optional<ConsensusLevel> consensus_from_name(std::string_view s);

using LabelTriple = std::array<HateCategory, 3>;

/// Throws std::invalid_argument unless exactly 3 labels are given.
ConsensusLevel consensus_level(std::span<const HateCategory> labels);
std::optional<HateCategory> majority_label(std::span<const HateCategory> labels);
bool intent_aligned(HateCategory majority, HateCategory machine_label);

/// Rating-count matrix: one row per item, one column per category.
using RatingMatrix = std::vector<std::array<int, kCategoryCount>>;

/// Fleiss kappa. Returns nullopt when chance agreement is 1 but observed agreement is not
/// (cannot happen for valid input, kept as the undefined sentinel). Throws
/// std::invalid_argument on empty input, fewer than 2 raters, or unequal row sums.
std::optional<double> fleiss_kappa(const RatingMatrix& counts);
RatingMatrix rating_matrix(const std::vector<LabelTriple>& triples);

/// Cohen kappa for two raters; 1.0 when both raters use a single identical category.
/// Throws std::invalid_argument on empty input.
double cohen_kappa(std::span<const std::pair<HateCategory, HateCategory>> pairs);

struct FilterReport {
    int input = 0;
    int dropped_low_quality = 0;
    int adjudication_queue = 0;
    int perfect = 0;
    int strong = 0;
    int weak = 0;
    int no_consensus = 0;
    int intent_mismatch = 0;
    int kept = 0;
    /// Strong samples kept for binary use whose fine label awaits an expert.
    int fine_label_pending = 0;
    std::optional<double> kappa_before;
    std::optional<double> kappa_after;

    bool conserved() const {
        return input == kept + dropped_low_quality + adjudication_queue + no_consensus + intent_mismatch;
    }
    bool operator==(const FilterReport&) const = default;
};

nlohmann::json to_json(const FilterReport& r);
std::string render_filter_report(const FilterReport& r);

struct FilterResult {
    std::vector<Sample> kept;
    /// Samples with an unresolved "not sure" record, waiting for an expert.
    std::vector<Sample> queue;
    FilterReport report;
};

/// Effective labels after applying adjudications. nullopt if a record is still flagged.
std::optional<LabelTriple> effective_labels(const Sample& s);

/// Low-quality drop, adjudication, consensus, then intent alignment for synthetic samples.
/// Kept samples carry `consensus` with the resolved label. Throws DataError unless every
/// sample has exactly 3 annotator records.
FilterResult filter_pipeline(const std::vector<Sample>& samples);

/// target_group (lowercase) -> substitution expressions.
class Lexicon {
public:
    Lexicon() = default;
    static Lexicon from_json(const nlohmann::json& j);
    static Lexicon load(const std::filesystem::path& path);

    void add(std::string group, std::vector<std::string> expressions);
    const std::vector<std::string>* find(std::string_view group) const;
    bool empty() const { return groups_.empty(); }

private:
    std::map<std::string, std::vector<std::string>> groups_;
};

inline constexpr std::string_view kInsultMarker = "<insult>";

/// Replaces each marker with an independent seeded draw. Throws DataError if the text has a
/// marker and the group is not in the lexicon.
std::string substitute_placeholder(const std::string& text, const std::string& target_group, const Lexicon& lexicon,
                                   std::uint64_t seed);

/// counts[pattern index][category code]; difficulty totals derive from the pattern rows.
struct StratTable {
    std::array<std::array<int, kCategoryCount>, 8> counts{};

    int pattern_total(int pattern_index) const;
    int difficulty_total(Difficulty d) const;
    int total() const;
    bool operator==(const StratTable&) const = default;
};

/// Throws DataError if any sample lacks a gold annotation.
StratTable stratify(std::span<const Sample> samples);
std::string render_strat_table(const StratTable& t);
nlohmann::json to_json(const StratTable& t);

}  // namespace arcade
