#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "arcade/core.hpp"

namespace arcade {

// JSON encodings. Categories are always integers.
void to_json(nlohmann::json& j, const MiaAnnotation& a);
void from_json(const nlohmann::json& j, MiaAnnotation& a);
void to_json(nlohmann::json& j, const AnnotatorRecord& r);
void from_json(const nlohmann::json& j, AnnotatorRecord& r);
void to_json(nlohmann::json& j, const Sample& s);
void from_json(const nlohmann::json& j, Sample& s);

/// Reads a category that must be an integer in 0..5; throws DataError otherwise.
HateCategory category_from_json(const nlohmann::json& j, std::string_view field);

/// Parses one dataset line. Throws DataError with the reason on bad records.
Sample parse_sample_line(std::string_view line);

/// Loads a JSON-lines dataset. Blank lines are skipped; ids must be unique.
std::vector<Sample> load_dataset(const std::filesystem::path& path);
std::vector<Sample> read_dataset(std::istream& in, std::string_view origin = "<stream>");

void write_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples);
void write_dataset(std::ostream& out, const std::vector<Sample>& samples);

/// Resolves an image locator against `image_root` unless absolute or a URL.
std::string resolve_image(const std::string& image_ref, const std::filesystem::path& image_root);

bool is_url(std::string_view locator);

}  // namespace arcade
