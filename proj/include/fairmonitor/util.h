#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace fairmonitor::util {

/// 64-bit FNV-1a. Stable across platforms; used wherever determinism matters.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t splitmix64(std::uint64_t x);
std::string hex64(std::uint64_t v);

std::string utc_now_iso();

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::vector<std::string> split_lines(std::string_view text);
bool starts_with_ci(std::string_view s, std::string_view prefix);

std::string read_file(const std::filesystem::path& path);
/// Write-temp-then-rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Formats a double with up to 12 significant digits and no locale effects.
std::string format_double(double v);

/// Runs fn(i) for i in [0, count) on up to `workers` threads. Exceptions
/// escaping fn are rethrown on the calling thread after all workers stop.
void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& fn);

/// Minimal RFC-4180 reader: quoted fields, doubled quotes, CRLF tolerant.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);
std::string csv_escape(std::string_view field);

} // namespace fairmonitor::util
