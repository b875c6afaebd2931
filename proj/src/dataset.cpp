#include "arcade/dataset.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

#include <spdlog/spdlog.h>

namespace arcade {

using nlohmann::json;

namespace {

const json& require(const json& j, const char* field) {
    auto it = j.find(field);
    if (it == j.end()) {
        throw DataError(std::string("missing field '") + field + "'");
    }
    return *it;
}

std::string require_string(const json& j, const char* field) {
    const json& v = require(j, field);
    if (!v.is_string()) {
        throw DataError(std::string("field '") + field + "' must be a string");
    }
    return v.get<std::string>();
}

std::string optional_string(const json& j, const char* field) {
    auto it = j.find(field);
    if (it == j.end() || it->is_null()) {
        return {};
    }
    if (!it->is_string()) {
        throw DataError(std::string("field '") + field + "' must be a string");
    }
    return it->get<std::string>();
}

bool optional_bool(const json& j, const char* field) {
    auto it = j.find(field);
    if (it == j.end() || it->is_null()) {
        return false;
    }
    if (!it->is_boolean()) {
        throw DataError(std::string("field '") + field + "' must be a boolean");
    }
    return it->get<bool>();
}

}  // namespace

HateCategory category_from_json(const json& j, std::string_view field) {
    if (!j.is_number_integer()) {
        throw DataError("field '" + std::string(field) + "' must be an integer category code");
    }
    auto c = category_from_code(j.get<long long>());
    if (!c) {
        throw DataError("field '" + std::string(field) + "' out of range 0..5: " + j.dump());
    }
    return *c;
}

void to_json(json& j, const MiaAnnotation& a) {
    j = json{{"y_text", code_of(a.y_text)},
             {"e_text", a.e_text},
             {"y_image", code_of(a.y_image)},
             {"e_image", a.e_image},
             {"y_combined", code_of(a.y_combined)}};
}

void from_json(const json& j, MiaAnnotation& a) {
    if (!j.is_object()) {
        throw DataError("mia must be an object");
    }
    a.y_text = category_from_json(require(j, "y_text"), "y_text");
    a.y_image = category_from_json(require(j, "y_image"), "y_image");
    a.y_combined = category_from_json(require(j, "y_combined"), "y_combined");
    // Legacy records may omit explanations.
    a.e_text = optional_string(j, "e_text");
    a.e_image = optional_string(j, "e_image");
}

void to_json(json& j, const AnnotatorRecord& r) {
    j = json{{"id", r.annotator_id}, {"label", code_of(r.label)}};
    if (r.low_quality) j["low_quality"] = true;
    if (r.not_sure) j["not_sure"] = true;
    if (r.adjudication) {
        j["adjudication"] = {{"expert", r.adjudication->expert_id}, {"label", code_of(r.adjudication->label)}};
    }
}

void from_json(const json& j, AnnotatorRecord& r) {
    if (!j.is_object()) {
        throw DataError("annotator record must be an object");
    }
    r.annotator_id = require_string(j, "id");
    r.low_quality = optional_bool(j, "low_quality");
    r.not_sure = optional_bool(j, "not_sure");
    auto label = j.find("label");
    if (label != j.end() && !label->is_null()) {
        r.label = category_from_json(*label, "label");
    } else if (!r.low_quality && !r.not_sure) {
        throw DataError("annotator record without label must carry a flag");
    }
    r.adjudication.reset();
    if (auto adj = j.find("adjudication"); adj != j.end() && !adj->is_null()) {
        r.adjudication = Adjudication{require_string(*adj, "expert"),
                                      category_from_json(require(*adj, "label"), "adjudication.label")};
    }
}

void to_json(json& j, const Sample& s) {
    j = json{{"id", s.id},
             {"text", s.text},
             {"image", s.image_ref},
             {"source", source_name(s.source)},
             {"split", split_name(s.split)}};
    if (s.gold) j["mia"] = *s.gold;
    if (s.machine_label) j["machine_label"] = code_of(*s.machine_label);
    if (!s.annotators.empty()) j["annotators"] = s.annotators;
    if (s.target_group) j["target_group"] = *s.target_group;
    if (s.consensus) {
        json c{{"level", s.consensus->level}, {"fine_label_pending", s.consensus->fine_label_pending}};
        c["label"] = s.consensus->label ? json(code_of(*s.consensus->label)) : json(nullptr);
        j["consensus"] = std::move(c);
    }
}

void from_json(const json& j, Sample& s) {
    if (!j.is_object()) {
        throw DataError("dataset record must be an object");
    }
    s.id = require_string(j, "id");
    if (s.id.empty()) {
        throw DataError("empty sample id");
    }
    s.text = require_string(j, "text");
    s.image_ref = require_string(j, "image");
    if (s.image_ref.empty()) {
        throw DataError("sample " + s.id + ": empty image locator");
    }
    const std::string source = require_string(j, "source");
    if (source == "real") {
        s.source = SampleSource::Real;
    } else if (source == "synthetic") {
        s.source = SampleSource::Synthetic;
    } else {
        throw DataError("sample " + s.id + ": unknown source '" + source + "'");
    }
    const std::string split = require_string(j, "split");
    if (split == "train") {
        s.split = Split::Train;
    } else if (split == "test") {
        s.split = Split::Test;
    } else if (split == "dev") {
        s.split = Split::Dev;
    } else {
        throw DataError("sample " + s.id + ": unknown split '" + split + "'");
    }
    s.gold.reset();
    if (auto m = j.find("mia"); m != j.end() && !m->is_null()) {
        s.gold = m->get<MiaAnnotation>();
    }
    s.machine_label.reset();
    if (auto m = j.find("machine_label"); m != j.end() && !m->is_null()) {
        s.machine_label = category_from_json(*m, "machine_label");
    }
    s.annotators.clear();
    if (auto a = j.find("annotators"); a != j.end() && !a->is_null()) {
        if (!a->is_array()) {
            throw DataError("sample " + s.id + ": annotators must be an array");
        }
        s.annotators = a->get<std::vector<AnnotatorRecord>>();
    }
    s.target_group.reset();
    if (auto t = j.find("target_group"); t != j.end() && !t->is_null()) {
        s.target_group = t->get<std::string>();
    }
    s.consensus.reset();
    if (auto c = j.find("consensus"); c != j.end() && !c->is_null()) {
        ConsensusInfo info;
        info.level = require_string(*c, "level");
        info.fine_label_pending = optional_bool(*c, "fine_label_pending");
        if (auto l = c->find("label"); l != c->end() && !l->is_null()) {
            info.label = category_from_json(*l, "consensus.label");
        }
        s.consensus = std::move(info);
    }
}

Sample parse_sample_line(std::string_view line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("invalid JSON: ") + e.what());
    }
    try {
        return j.get<Sample>();
    } catch (const json::exception& e) {
        throw DataError(std::string("invalid record: ") + e.what());
    }
}

std::vector<Sample> read_dataset(std::istream& in, std::string_view origin) {
    std::vector<Sample> samples;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    std::size_t degenerate = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        Sample s;
        try {
            s = parse_sample_line(line);
        } catch (const DataError& e) {
            throw DataError(std::string(origin) + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!seen.insert(s.id).second) {
            throw DataError(std::string(origin) + ":" + std::to_string(lineno) + ": duplicate id '" + s.id + "'");
        }
        if (s.degenerate()) {
            ++degenerate;
        }
        samples.push_back(std::move(s));
    }
    if (degenerate > 0) {
        spdlog::warn("{}: {} sample(s) with empty text flagged degenerate", origin, degenerate);
    }
    return samples;
}

std::vector<Sample> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open dataset " + path.string());
    }
    return read_dataset(in, path.string());
}

void write_dataset(std::ostream& out, const std::vector<Sample>& samples) {
    for (const auto& s : samples) {
        out << json(s).dump() << '\n';
    }
}

void write_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw DataError("cannot write dataset " + path.string());
    }
    write_dataset(out, samples);
}

bool is_url(std::string_view locator) {
    return locator.starts_with("http://") || locator.starts_with("https://") || locator.starts_with("data:");
}

std::string resolve_image(const std::string& image_ref, const std::filesystem::path& image_root) {
    if (is_url(image_ref) || image_root.empty()) {
        return image_ref;
    }
    std::filesystem::path p(image_ref);
    if (p.is_absolute()) {
        return image_ref;
    }
    return (image_root / p).lexically_normal().string();
}

}  // namespace arcade
