// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sbd {

// Version stamped into every file this library writes.
inline constexpr int kArtifactFormatVersion = 1;

// Shortest decimal form that parses back to the identical double.
std::string format_double(double x);
double parse_double(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
// Writes via a temporary file and rename.
void write_text_file(const std::filesystem::path& path, std::string_view contents);

// CSV with a leading "# format_version=N" line followed by the header row.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> cells);
  // Numeric cells are written with format_double.
  void add_numeric_row(const std::vector<double>& cells);
  std::size_t column(std::string_view name) const;
  double number(std::size_t row, std::size_t col) const;
};

std::string to_csv(const CsvTable& table);
// Throws UnsupportedVersion when the version line is missing or unknown.
CsvTable parse_csv(std::string_view text);

// Lowercase hex SHA-256 of the input.
std::string sha256_hex(std::string_view data);

}  // namespace sbd
