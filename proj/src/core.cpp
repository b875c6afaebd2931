#include "arcade/core.hpp"

#include <algorithm>
#include <cctype>

namespace arcade {

namespace {

constexpr std::array<std::string_view, kCategoryCount> kCategoryNames = {
    "NotHate", "Racist", "Sexist", "Homophobic", "ReligiousHate", "OtherHate",
};

std::string fold(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    return out;
}

}  // namespace

std::string_view category_name(HateCategory c) { return kCategoryNames.at(code_of(c)); }

std::optional<HateCategory> category_from_code(long long code) {
    if (code < 0 || code >= kCategoryCount) {
        return std::nullopt;
    }
    return static_cast<HateCategory>(code);
}

std::optional<HateCategory> category_from_name(std::string_view name) {
    const std::string folded = fold(name);
    for (HateCategory c : kAllCategories) {
        if (fold(category_name(c)) == folded) {
            return c;
        }
    }
    return std::nullopt;
}

std::string InteractionPattern::to_string() const {
    return {text_hate ? '1' : '0', image_hate ? '1' : '0', combined_hate ? '1' : '0'};
}

std::optional<InteractionPattern> InteractionPattern::parse(std::string_view bits) {
    if (bits.size() != 3 || !std::all_of(bits.begin(), bits.end(), [](char c) { return c == '0' || c == '1'; })) {
        return std::nullopt;
    }
    return InteractionPattern{bits[0] == '1', bits[1] == '1', bits[2] == '1'};
}

std::string_view difficulty_name(Difficulty d) {
    switch (d) {
        case Difficulty::Easy: return "Easy";
        case Difficulty::Normal: return "Normal";
        case Difficulty::Hard: return "Hard";
    }
    return "?";
}

std::optional<Difficulty> difficulty_from_name(std::string_view name) {
    for (Difficulty d : {Difficulty::Easy, Difficulty::Normal, Difficulty::Hard}) {
        if (fold(difficulty_name(d)) == fold(name)) {
            return d;
        }
    }
    return std::nullopt;
}

InteractionPattern pattern_of(const MiaAnnotation& ann) {
    return {binarize(ann.y_text), binarize(ann.y_image), binarize(ann.y_combined)};
}

std::string_view source_name(SampleSource s) { return s == SampleSource::Real ? "real" : "synthetic"; }

std::string_view split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Test: return "test";
        case Split::Dev: return "dev";
    }
    return "?";
}

}  // namespace arcade
