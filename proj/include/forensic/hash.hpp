#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace forensic {

// Lowercase hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);

std::string base64_encode(std::string_view bytes);

std::string read_file_bytes(const std::filesystem::path& path);

// Writes through a temporary sibling and renames, so readers never observe a
// partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// Stable 64-bit seed for a named sub-stream of a run seed. Independent of
// platform and of the order in which sub-streams are requested.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);

}  // namespace forensic
