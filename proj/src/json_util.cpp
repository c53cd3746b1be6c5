#include "impact_gate/json_util.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "impact_gate/error.hpp"
#include "impact_gate/resources.hpp"

namespace impact_gate {

std::string read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::io_error, "cannot open " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path &path, std::string_view content) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::io_error, "cannot write " + path.string());
  }
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) {
    throw Error(ErrorCode::io_error, "short write to " + path.string());
  }
}

std::vector<JsonLine> parse_json_lines(std::string_view text, std::vector<JsonLinesError> *errors) {
  std::vector<JsonLine> out;
  std::size_t line_number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    const auto line = text.substr(pos, end == std::string_view::npos ? text.size() - pos : end - pos);
    ++line_number;
    if (!trim(line).empty()) {
      try {
        out.push_back({line_number, Json::parse(line)});
      } catch (const Json::exception &e) {
        if (errors != nullptr) {
          errors->push_back({line_number, e.what()});
        }
      }
    }
    if (end == std::string_view::npos) {
      break;
    }
    pos = end + 1;
  }
  return out;
}

std::vector<Json> read_json_lines(const std::filesystem::path &path) {
  const auto text = read_file(path);
  std::vector<JsonLinesError> errors;
  auto lines = parse_json_lines(text, &errors);
  if (!errors.empty()) {
    throw Error(ErrorCode::parse_error, path.string() + ":" + std::to_string(errors.front().line_number) +
                                            ": " + errors.front().message);
  }
  std::vector<Json> out;
  out.reserve(lines.size());
  for (auto &line : lines) {
    out.push_back(std::move(line.value));
  }
  return out;
}

std::string to_json_lines(const std::vector<Json> &values) {
  std::string out;
  for (const auto &value : values) {
    out += value.dump();
    out += '\n';
  }
  return out;
}

std::string fnv1a64_hex(std::string_view data) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const unsigned char c : data) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

std::string to_lower(std::string_view text) {
  std::string out(text);
  for (auto &c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::string trim(std::string_view text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) {
    ++begin;
  }
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) {
    --end;
  }
  return std::string(text.substr(begin, end - begin));
}

std::string normalize_key(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (const unsigned char raw : text) {
    const char c = (raw == '_' || raw == '-') ? ' ' : static_cast<char>(std::tolower(raw));
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out += ' ';
      pending_space = false;
    }
    out += c;
  }
  return out;
}

std::string format_fixed(double value, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, value);
  return buf;
}

namespace resources {

std::string_view get(std::string_view name) {
  if (auto found = find(name)) {
    return *found;
  }
  throw Error(ErrorCode::io_error, "missing bundled resource " + std::string(name));
}

} // namespace resources

} // namespace impact_gate
