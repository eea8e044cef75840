#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace rescbm {

struct KeyValueEntry {
  std::string key;
  std::string value;
  int line = 0;
};

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
/// Errors carry the 1-based line number. A section header `[name]` ends parsing and
/// its line number is reported through `section_line` (0 if absent).
std::vector<KeyValueEntry> parse_key_values(const std::string& text, const std::string& source_name,
                                            int* section_line = nullptr);

std::vector<KeyValueEntry> read_key_value_file(const std::filesystem::path& path);

/// Last entry wins; duplicates are rejected.
std::map<std::string, std::string> to_map(const std::vector<KeyValueEntry>& entries,
                                          const std::string& source_name);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

std::string trim(std::string_view s);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& text, const std::string& what);
long long parse_integer(const std::string& text, const std::string& what);

}  // namespace rescbm
