#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace nowcast::csv {

// A parsed comma-separated record with its 1-based source line number.
struct Record {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

// Reads a header + records file. Blank lines and lines starting with '#'
// are skipped; CR line endings and surrounding whitespace are stripped.
// The header must match `expected_header` exactly (after trimming).
std::vector<Record> read_file(const std::string& path, const std::vector<std::string>& expected_header);
std::vector<Record> read_text(std::string_view text, const std::string& source,
                              const std::vector<std::string>& expected_header);

std::string read_whole_file(const std::string& path);
void write_whole_file(const std::string& path, std::string_view contents);

std::vector<std::string> split(std::string_view line);
std::string_view trim(std::string_view s);

// Shortest decimal form that round-trips, capped at 17 significant digits.
std::string format_double(double x);

double parse_double(const std::string& field, const std::string& source, std::size_t line);
std::int64_t parse_int(const std::string& field, const std::string& source, std::size_t line);

}  // namespace nowcast::csv
