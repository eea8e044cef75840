#include "rescbm/keyvalue.hpp"

#include "rescbm/error.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace rescbm {

std::string trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<KeyValueEntry> parse_key_values(const std::string& text, const std::string& source_name,
                                            int* section_line) {
  std::vector<KeyValueEntry> out;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  if (section_line != nullptr) *section_line = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      if (section_line != nullptr) {
        *section_line = line_no;
        return out;
      }
      throw ValidationError(source_name + ":" + std::to_string(line_no) + ": unexpected section header");
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(source_name + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    KeyValueEntry e{trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)),
                    line_no};
    if (e.key.empty()) {
      throw ValidationError(source_name + ":" + std::to_string(line_no) + ": empty key");
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<KeyValueEntry> read_key_value_file(const std::filesystem::path& path) {
  return parse_key_values(read_text_file(path), path.string());
}

std::map<std::string, std::string> to_map(const std::vector<KeyValueEntry>& entries,
                                          const std::string& source_name) {
  std::map<std::string, std::string> out;
  for (const auto& e : entries) {
    if (!out.emplace(e.key, e.value).second) {
      throw ValidationError(source_name + ":" + std::to_string(e.line) + ": duplicate key '" + e.key + "'");
    }
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ValidationError(what + ": not a number: '" + text + "'");
  }
  return v;
}

long long parse_integer(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  long long v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ValidationError(what + ": not an integer: '" + text + "'");
  }
  return v;
}

}  // namespace rescbm
