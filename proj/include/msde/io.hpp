#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace msde {

// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path &path, std::string_view contents);

std::string read_file(const std::filesystem::path &path);

// 64-bit FNV-1a, used for manifest content hashes.
std::uint64_t fnv1a64(std::string_view bytes);

std::string hex64(std::uint64_t value);

}  // namespace msde
