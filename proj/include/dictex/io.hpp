#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace dictex {

std::string read_file(const std::filesystem::path& path);

/// Writes via a sibling temp file and rename, so readers never observe a
/// partially written artifact.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Serializes one JSON object per line with sorted keys and a trailing newline.
std::string to_jsonl(const std::vector<nlohmann::json>& records);

/// Parses a line-delimited JSON file, skipping blank lines. Throws on malformed lines.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

/// Single-pass substitution of "{name}" placeholders; substituted text is not
/// rescanned. Unknown placeholders are left as they are.
std::string render_placeholders(std::string_view text, const std::map<std::string, std::string>& values);

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);

}  // namespace dictex
