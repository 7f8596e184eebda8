#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

namespace opttune {

/// Parses a JSON document; syntax errors become ParseError with line/column.
nlohmann::json parse_json(std::string_view text, const std::string& origin);
nlohmann::json read_json_file(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace opttune
