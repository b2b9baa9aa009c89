#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sohnet {

inline constexpr const char* kToolVersion = "0.1.0";

std::string read_text_file(const std::filesystem::path& path);
/// Writes atomically enough for our purposes: truncate, write, check.
void write_text_file(const std::filesystem::path& path, std::string_view text);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

/// "# sohnet <version> seed=<seed> config=<digest>" followed by a newline.
std::string provenance_header(std::uint64_t seed, std::string_view config_text);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

/// Splits on commas; no quoting support (none of our formats need it).
std::vector<std::string_view> split_csv_line(std::string_view line);
std::string_view trim(std::string_view s);

}  // namespace sohnet
