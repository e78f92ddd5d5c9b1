#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace dictex {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// Lowercase hex SHA-256 of a file's bytes. Throws Error(kIo) if unreadable.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace dictex
