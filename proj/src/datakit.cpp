#include "arcade/datakit.hpp"

#include <algorithm>
#include <cstdio>
#include <cctype>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace arcade {

using nlohmann::json;

std::string_view consensus_name(ConsensusLevel c) {
    switch (c) {
        case ConsensusLevel::Perfect: return "perfect";
        case ConsensusLevel::Strong: return "strong";
        case ConsensusLevel::Weak: return "weak";
        case ConsensusLevel::NoConsensus: return "no_consensus";
    }
    return "?";
}

std::optional<ConsensusLevel> consensus_from_name(std::string_view s) {
    for (auto c : {ConsensusLevel::Perfect, ConsensusLevel::Strong, ConsensusLevel::Weak, ConsensusLevel::NoConsensus}) {
        if (consensus_name(c) == s) return c;
    }
    return std::nullopt;
}

namespace {

void require_triple(std::span<const HateCategory> labels) {
    if (labels.size() != 3) {
        throw std::invalid_argument("expected 3 labels, got " + std::to_string(labels.size()));
    }
}

}  // namespace

ConsensusLevel consensus_level(std::span<const HateCategory> labels) {
    require_triple(labels);
    if (labels[0] == labels[1] && labels[1] == labels[2]) return ConsensusLevel::Perfect;
    if (std::all_of(labels.begin(), labels.end(), binarize)) return ConsensusLevel::Strong;
    if (majority_label(labels)) return ConsensusLevel::Weak;
    return ConsensusLevel::NoConsensus;
}

std::optional<HateCategory> majority_label(std::span<const HateCategory> labels) {
    require_triple(labels);
    if (labels[0] == labels[1] || labels[0] == labels[2]) return labels[0];
    if (labels[1] == labels[2]) return labels[1];
    return std::nullopt;
}

bool intent_aligned(HateCategory majority, HateCategory machine_label) { return majority == machine_label; }

// ---------------------------------------------------------------------------
// Agreement

std::optional<double> fleiss_kappa(const RatingMatrix& counts) {
    if (counts.empty()) throw std::invalid_argument("fleiss_kappa: no items");
    const auto row_sum = [](const auto& row) {
        int s = 0;
        for (int v : row) {
            if (v < 0) throw std::invalid_argument("fleiss_kappa: negative count");
            s += v;
        }
        return s;
    };
    const int n = row_sum(counts.front());
    if (n < 2) throw std::invalid_argument("fleiss_kappa: need at least 2 raters per item");

    std::array<double, kCategoryCount> column{};
    double p_sum = 0.0;
    for (const auto& row : counts) {
        if (row_sum(row) != n) throw std::invalid_argument("fleiss_kappa: rows have different rater counts");
        double sq = 0.0;
        for (int j = 0; j < kCategoryCount; ++j) {
            sq += static_cast<double>(row[j]) * row[j];
            column[j] += row[j];
        }
        p_sum += (sq - n) / (static_cast<double>(n) * (n - 1));
    }
    const double items = static_cast<double>(counts.size());
    const double p_bar = p_sum / items;
    double p_e = 0.0;
    for (double c : column) {
        const double p = c / (items * n);
        p_e += p * p;
    }
    if (p_e == 1.0) {
        if (p_bar == 1.0) return 1.0;
        return std::nullopt;
    }
    return (p_bar - p_e) / (1.0 - p_e);
}

RatingMatrix rating_matrix(const std::vector<LabelTriple>& triples) {
    RatingMatrix m(triples.size());
    for (std::size_t i = 0; i < triples.size(); ++i) {
        m[i].fill(0);
        for (HateCategory c : triples[i]) m[i][static_cast<std::size_t>(code_of(c))] += 1;
    }
    return m;
}

double cohen_kappa(std::span<const std::pair<HateCategory, HateCategory>> pairs) {
    if (pairs.empty()) throw std::invalid_argument("cohen_kappa: no pairs");
    std::array<double, kCategoryCount> a{}, b{};
    double agree = 0.0;
    for (const auto& [x, y] : pairs) {
        a[static_cast<std::size_t>(code_of(x))] += 1;
        b[static_cast<std::size_t>(code_of(y))] += 1;
        if (x == y) agree += 1;
    }
    const double n = static_cast<double>(pairs.size());
    const double p_o = agree / n;
    double p_e = 0.0;
    for (int j = 0; j < kCategoryCount; ++j) p_e += (a[j] / n) * (b[j] / n);
    if (p_e == 1.0) return 1.0;
    return (p_o - p_e) / (1.0 - p_e);
}

// ---------------------------------------------------------------------------
// Filtering

json to_json(const FilterReport& r) {
    auto k = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return json{{"input", r.input},
                {"dropped_low_quality", r.dropped_low_quality},
                {"adjudication_queue", r.adjudication_queue},
                {"perfect", r.perfect},
                {"strong", r.strong},
                {"weak", r.weak},
                {"no_consensus", r.no_consensus},
                {"intent_mismatch", r.intent_mismatch},
                {"kept", r.kept},
                {"fine_label_pending", r.fine_label_pending},
                {"kappa_before", k(r.kappa_before)},
                {"kappa_after", k(r.kappa_after)}};
}

std::string render_filter_report(const FilterReport& r) {
    std::ostringstream out;
    auto row = [&](const char* name, int v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%-22s %8d\n", name, v);
        out << buf;
    };
    auto kappa = [](const std::optional<double>& v) {
        if (!v) return std::string("n/a");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", *v);
        return std::string(buf);
    };
    row("input", r.input);
    row("dropped_low_quality", r.dropped_low_quality);
    row("adjudication_queue", r.adjudication_queue);
    row("perfect", r.perfect);
    row("strong", r.strong);
    row("weak", r.weak);
    row("no_consensus", r.no_consensus);
    row("intent_mismatch", r.intent_mismatch);
    row("kept", r.kept);
    row("fine_label_pending", r.fine_label_pending);
    out << "fleiss kappa before    " << kappa(r.kappa_before) << "\n";
    out << "fleiss kappa after     " << kappa(r.kappa_after) << "\n";
    return out.str();
}

std::optional<LabelTriple> effective_labels(const Sample& s) {
    if (s.annotators.size() != 3) return std::nullopt;
    LabelTriple t{};
    for (std::size_t i = 0; i < 3; ++i) {
        const auto& r = s.annotators[i];
        if (r.low_quality) return std::nullopt;
        if (r.not_sure) {
            if (!r.adjudication) return std::nullopt;
            t[i] = r.adjudication->label;
        } else {
            t[i] = r.label;
        }
    }
    return t;
}

FilterResult filter_pipeline(const std::vector<Sample>& samples) {
    FilterResult out;
    FilterReport& rep = out.report;
    std::vector<LabelTriple> raw, clean;
    raw.reserve(samples.size());

    for (const auto& s : samples) {
        if (s.annotators.size() != 3) {
            throw DataError("sample '" + s.id + "' has " + std::to_string(s.annotators.size()) +
                            " annotator records, expected 3");
        }
        rep.input += 1;
        raw.push_back({s.annotators[0].label, s.annotators[1].label, s.annotators[2].label});

        // Step 1: quality flags.
        if (std::any_of(s.annotators.begin(), s.annotators.end(), [](const auto& r) { return r.low_quality; })) {
            rep.dropped_low_quality += 1;
            continue;
        }
        const auto labels = effective_labels(s);
        if (!labels) {
            rep.adjudication_queue += 1;
            out.queue.push_back(s);
            continue;
        }

        // Step 2: consensus.
        const ConsensusLevel level = consensus_level(*labels);
        ConsensusInfo info;
        info.level = std::string(consensus_name(level));
        switch (level) {
            case ConsensusLevel::NoConsensus: rep.no_consensus += 1; continue;
            case ConsensusLevel::Perfect:
                rep.perfect += 1;
                info.label = (*labels)[0];
                break;
            case ConsensusLevel::Weak:
                rep.weak += 1;
                info.label = majority_label(*labels);
                break;
            case ConsensusLevel::Strong:
                rep.strong += 1;
                info.label = majority_label(*labels);
                info.fine_label_pending = !info.label.has_value();
                break;
        }

        // Step 3: intent alignment, synthetic samples only.
        if (s.source == SampleSource::Synthetic) {
            if (!s.machine_label) throw DataError("synthetic sample '" + s.id + "' has no machine_label");
            const bool aligned =
                info.label ? intent_aligned(*info.label, *s.machine_label) : binarize(*s.machine_label);
            if (!aligned) {
                rep.intent_mismatch += 1;
                continue;
            }
        }

        if (info.fine_label_pending) rep.fine_label_pending += 1;
        Sample kept = s;
        kept.consensus = std::move(info);
        out.kept.push_back(std::move(kept));
        clean.push_back(*labels);
        rep.kept += 1;
    }

    if (!raw.empty()) rep.kappa_before = fleiss_kappa(rating_matrix(raw));
    if (!clean.empty()) rep.kappa_after = fleiss_kappa(rating_matrix(clean));
    return out;
}

// ---------------------------------------------------------------------------
// Placeholder substitution

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Uniform index in [0, n) by rejection, so draws do not depend on the standard library's
// distribution implementation.
std::size_t draw_index(std::mt19937_64& rng, std::size_t n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
}

}  // namespace

void Lexicon::add(std::string group, std::vector<std::string> expressions) {
    if (expressions.empty()) throw DataError("lexicon group '" + group + "' has no expressions");
    groups_[lower(group)] = std::move(expressions);
}

const std::vector<std::string>* Lexicon::find(std::string_view group) const {
    auto it = groups_.find(lower(group));
    return it == groups_.end() ? nullptr : &it->second;
}

Lexicon Lexicon::from_json(const json& j) {
    if (!j.is_object()) throw DataError("lexicon must be an object of group -> [expressions]");
    Lexicon lex;
    for (const auto& [group, list] : j.items()) {
        if (!list.is_array()) throw DataError("lexicon group '" + group + "' is not a list");
        std::vector<std::string> exprs;
        for (const auto& e : list) {
            if (!e.is_string()) throw DataError("lexicon group '" + group + "' has a non-string entry");
            exprs.push_back(e.get<std::string>());
        }
        lex.add(group, std::move(exprs));
    }
    return lex;
}

Lexicon Lexicon::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open lexicon " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw DataError("lexicon " + path.string() + ": " + e.what());
    }
}

std::string substitute_placeholder(const std::string& text, const std::string& target_group, const Lexicon& lexicon,
                                   std::uint64_t seed) {
    std::size_t pos = text.find(kInsultMarker);
    if (pos == std::string::npos) return text;
    const auto* exprs = lexicon.find(target_group);
    if (!exprs) throw DataError("lexicon has no entries for target group '" + target_group + "'");

    std::mt19937_64 rng(seed);
    std::string out;
    std::size_t from = 0;
    while (pos != std::string::npos) {
        out.append(text, from, pos - from);
        out += (*exprs)[draw_index(rng, exprs->size())];
        from = pos + kInsultMarker.size();
        pos = text.find(kInsultMarker, from);
    }
    out.append(text, from, std::string::npos);
    return out;
}

// ---------------------------------------------------------------------------
// Stratification

int StratTable::pattern_total(int pattern_index) const {
    int s = 0;
    for (int v : counts.at(static_cast<std::size_t>(pattern_index))) s += v;
    return s;
}

int StratTable::difficulty_total(Difficulty d) const {
    int s = 0;
    for (int p = 0; p < 8; ++p) {
        if (difficulty_of(InteractionPattern::from_index(p)) == d) s += pattern_total(p);
    }
    return s;
}

int StratTable::total() const {
    int s = 0;
    for (int p = 0; p < 8; ++p) s += pattern_total(p);
    return s;
}

StratTable stratify(std::span<const Sample> samples) {
    StratTable t;
    for (const auto& s : samples) {
        if (!s.gold) throw DataError("sample '" + s.id + "' has no gold annotation");
        const int p = pattern_of(*s.gold).index();
        t.counts[static_cast<std::size_t>(p)][static_cast<std::size_t>(code_of(s.gold->y_combined))] += 1;
    }
    return t;
}

std::string render_strat_table(const StratTable& t) {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-8s %-7s", "pattern", "diff");
    out << buf;
    for (auto c : kAllCategories) {
        std::snprintf(buf, sizeof buf, " %6d", code_of(c));
        out << buf;
    }
    out << "  total\n";
    for (const auto& p : kPatternTableOrder) {
        std::snprintf(buf, sizeof buf, "%-8s %-7s", p.to_string().c_str(),
                      std::string(difficulty_name(difficulty_of(p))).c_str());
        out << buf;
        for (int v : t.counts[static_cast<std::size_t>(p.index())]) {
            std::snprintf(buf, sizeof buf, " %6d", v);
            out << buf;
        }
        std::snprintf(buf, sizeof buf, "  %5d\n", t.pattern_total(p.index()));
        out << buf;
    }
    for (auto d : {Difficulty::Easy, Difficulty::Normal, Difficulty::Hard}) {
        out << difficulty_name(d) << ": " << t.difficulty_total(d) << "\n";
    }
    out << "total: " << t.total() << "\n";
    return out.str();
}

json to_json(const StratTable& t) {
    json patterns = json::object();
    for (int p = 0; p < 8; ++p) {
        const auto pat = InteractionPattern::from_index(p);
        patterns[pat.to_string()] = json{{"difficulty", difficulty_name(difficulty_of(pat))},
                                         {"counts", t.counts[static_cast<std::size_t>(p)]},
                                         {"total", t.pattern_total(p)}};
    }
    return json{{"patterns", patterns},
                {"difficulty",
                 {{"Easy", t.difficulty_total(Difficulty::Easy)},
                  {"Normal", t.difficulty_total(Difficulty::Normal)},
                  {"Hard", t.difficulty_total(Difficulty::Hard)}}},
                {"total", t.total()}};
}

}  // namespace arcade
