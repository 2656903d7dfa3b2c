#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

namespace nsn {

/// Parses a JSON file; NotFoundError when absent, ParseError when malformed.
nlohmann::ordered_json read_json(const std::filesystem::path& path);

/// Writes `j` indented by two spaces plus a trailing newline, creating parent directories.
void write_json(const nlohmann::ordered_json& j, const std::filesystem::path& path);

}  // namespace nsn
