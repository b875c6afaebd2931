#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace arcade {

/// Raised for malformed inputs: dataset lines, fixture files, configs.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised for unusable configuration (missing credentials, bad flags).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Fine-grained hate category. Codes are fixed and serialized as integers.
enum class HateCategory : std::uint8_t {
    NotHate = 0,
    Racist = 1,
    Sexist = 2,
    Homophobic = 3,
    ReligiousHate = 4,
    OtherHate = 5,
};

inline constexpr int kCategoryCount = 6;

inline constexpr std::array<HateCategory, kCategoryCount> kAllCategories = {
    HateCategory::NotHate,      HateCategory::Racist,        HateCategory::Sexist,
    HateCategory::Homophobic,   HateCategory::ReligiousHate, HateCategory::OtherHate,
};

constexpr int code_of(HateCategory c) { return static_cast<int>(c); }

std::string_view category_name(HateCategory c);
std::optional<HateCategory> category_from_code(long long code);
std::optional<HateCategory> category_from_name(std::string_view name);

/// 1 iff the category is one of the five hateful subtypes.
constexpr bool binarize(HateCategory c) { return c != HateCategory::NotHate; }

/// Unimodal + combined intent annotation. Explanations are carried, never parsed.
struct MiaAnnotation {
    HateCategory y_text = HateCategory::NotHate;
    std::string e_text;
    HateCategory y_image = HateCategory::NotHate;
    std::string e_image;
    HateCategory y_combined = HateCategory::NotHate;

    bool operator==(const MiaAnnotation&) const = default;
};

/// Binarized (text, image, combined) triple; written as e.g. "101".
struct InteractionPattern {
    bool text_hate = false;
    bool image_hate = false;
    bool combined_hate = false;

    /// Bits packed as text<<2 | image<<1 | combined, so "101" has index 5.
    constexpr int index() const {
        return (text_hate ? 4 : 0) | (image_hate ? 2 : 0) | (combined_hate ? 1 : 0);
    }
    static constexpr InteractionPattern from_index(int i) {
        return {(i & 4) != 0, (i & 2) != 0, (i & 1) != 0};
    }
    std::string to_string() const;
    static std::optional<InteractionPattern> parse(std::string_view bits);

    bool operator==(const InteractionPattern&) const = default;
};

enum class Difficulty : std::uint8_t { Easy, Normal, Hard };

std::string_view difficulty_name(Difficulty d);
std::optional<Difficulty> difficulty_from_name(std::string_view name);

InteractionPattern pattern_of(const MiaAnnotation& ann);

constexpr Difficulty difficulty_of(InteractionPattern p) {
    const bool unimodal_or = p.text_hate || p.image_hate;
    if (p.combined_hate == unimodal_or) {
        return Difficulty::Easy;
    }
    // Mismatch: either hate emerged from benign parts (001), or both
    // modalities were hateful and the pair was neutralized (110).
    if (p.combined_hate || (p.text_hate && p.image_hate)) {
        return Difficulty::Hard;
    }
    return Difficulty::Normal;
}

/// Patterns in the row order used by difficulty-grouped tables.
inline constexpr std::array<InteractionPattern, 8> kPatternTableOrder = {
    InteractionPattern{false, false, false}, InteractionPattern{false, true, true},
    InteractionPattern{true, false, true},   InteractionPattern{true, true, true},
    InteractionPattern{false, true, false},  InteractionPattern{true, false, false},
    InteractionPattern{false, false, true},  InteractionPattern{true, true, false},
};

enum class SampleSource : std::uint8_t { Real, Synthetic };
enum class Split : std::uint8_t { Train, Test, Dev };

std::string_view source_name(SampleSource s);
std::string_view split_name(Split s);

/// Expert replacement of a record that was flagged "not sure".
struct Adjudication {
    std::string expert_id;
    HateCategory label = HateCategory::NotHate;

    bool operator==(const Adjudication&) const = default;
};

/// One human judgement of the combined label. Flags dominate the label in filtering.
struct AnnotatorRecord {
    std::string annotator_id;
    HateCategory label = HateCategory::NotHate;
    bool low_quality = false;
    bool not_sure = false;
    std::optional<Adjudication> adjudication;

    bool operator==(const AnnotatorRecord&) const = default;
};

/// Result of consensus filtering, attached to curated samples.
struct ConsensusInfo {
    std::string level;
    std::optional<HateCategory> label;
    bool fine_label_pending = false;

    bool operator==(const ConsensusInfo&) const = default;
};

/// A text-image pair with optional gold annotation.
struct Sample {
    std::string id;
    std::string text;
    std::string image_ref;
    SampleSource source = SampleSource::Real;
    Split split = Split::Test;
    std::optional<MiaAnnotation> gold;
    std::optional<HateCategory> machine_label;
    std::vector<AnnotatorRecord> annotators;
    std::optional<std::string> target_group;
    std::optional<ConsensusInfo> consensus;

    /// Empty text is allowed (image-only cases) but flagged.
    bool degenerate() const { return text.empty(); }

    bool operator==(const Sample&) const = default;
};

}  // namespace arcade
