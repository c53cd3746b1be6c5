#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace impact_gate {

using Json = nlohmann::json;

std::string read_file(const std::filesystem::path &path);
void write_file(const std::filesystem::path &path, std::string_view content);

struct JsonLine {
  std::size_t line_number = 0; // 1-based
  Json value;
};

struct JsonLinesError {
  std::size_t line_number = 0;
  std::string message;
};

// Parses a JSON Lines document. Blank lines are skipped; malformed lines are
// reported in `errors` instead of aborting.
std::vector<JsonLine> parse_json_lines(std::string_view text, std::vector<JsonLinesError> *errors);

// Throws Error(parse_error) naming the first bad line.
std::vector<Json> read_json_lines(const std::filesystem::path &path);

std::string to_json_lines(const std::vector<Json> &values);

// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string fnv1a64_hex(std::string_view data);

// Lowercases ASCII, maps '_' and '-' to spaces and collapses whitespace.
std::string normalize_key(std::string_view text);

std::string to_lower(std::string_view text);
std::string trim(std::string_view text);

// Fixed-point rendering used in reports ("%.*f").
std::string format_fixed(double value, int precision);

} // namespace impact_gate
