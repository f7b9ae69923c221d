#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace esr {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

/// Hex SHA-1 of "blob <size>\0<content>", the object id git assigns to a file.
std::string git_blob_hash(std::span<const std::uint8_t> bytes);
std::string git_blob_hash_file(const std::filesystem::path& path);

}  // namespace esr
