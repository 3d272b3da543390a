#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace w2s {

inline constexpr std::uint64_t fnv1a_init = 0xcbf29ce484222325ULL;

inline std::uint64_t fnv1a(std::uint64_t h, std::span<const unsigned char> bytes) {
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a(std::uint64_t h, std::string_view s) {
    return fnv1a(h, std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

std::string hex64(std::uint64_t value);
std::uint64_t parse_hex64(std::string_view text);

// Shortest round-trip decimal form of a double.
std::string format_double(double value);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace w2s
