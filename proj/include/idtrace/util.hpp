#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace idtrace {

// Collapses whitespace runs to single spaces and trims both ends.
std::string normalize_ws(std::string_view text);

// True when `needle` occurs verbatim in `haystack` after whitespace
// normalization of both sides. Empty needles never match.
bool is_verbatim_span(std::string_view haystack, std::string_view needle);

std::string to_lower(std::string_view text);

// SHA-256 of arbitrary bytes, lowercase hex.
std::string sha256_hex(std::string_view bytes);

std::string read_text_file(const std::filesystem::path& path);

// Writes via a sibling temp file + rename so readers never observe a
// partially written file.
void write_text_file_atomic(const std::filesystem::path& path, std::string_view content);

// First number appearing in `text` (integer or decimal, optional sign),
// or nullopt. "score: 7/10" yields 7.
std::optional<double> first_number(std::string_view text);

// Splits on '.', '!', '?', ';' and trims; empty pieces are dropped.
// Commas do not split.
std::vector<std::string> split_sentences(std::string_view text);

void log_warn(const std::string& message);

// RFC3339-ish UTC timestamp for fixture provenance.
std::string utc_timestamp();

}  // namespace idtrace
