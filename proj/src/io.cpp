// SPDX-License-Identifier: Apache-2.0
#include "sbd/io.hpp"

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sbd/error.hpp"

namespace sbd {

std::string format_double(double x) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  if (ec != std::errc()) throw InvalidArgument("cannot format double");
  return std::string(buf.data(), end);
}

double parse_double(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
    text.remove_suffix(1);
  double x = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
  if (ec != std::errc() || end != text.data() + text.size())
    throw ParseError("not a number: '" + std::string(text) + "'");
  return x;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void CsvTable::add_row(std::vector<std::string> cells) {
  if (cells.size() != header.size()) throw ShapeError("CSV row does not match the header");
  for (const auto& c : cells)
    if (c.find_first_of(",\n\r") != std::string::npos) throw InvalidArgument("CSV cell contains a separator");
  rows.push_back(std::move(cells));
}

void CsvTable::add_numeric_row(const std::vector<double>& cells) {
  std::vector<std::string> text;
  text.reserve(cells.size());
  for (double x : cells) text.push_back(format_double(x));
  add_row(std::move(text));
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw ParseError("CSV has no column '" + std::string(name) + "'");
}

double CsvTable::number(std::size_t row, std::size_t col) const { return parse_double(rows.at(row).at(col)); }

std::string to_csv(const CsvTable& table) {
  std::string out = "# format_version=" + std::to_string(kArtifactFormatVersion) + "\n";
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (i) out += ',';
    out += table.header[i];
  }
  out += '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += row[i];
    }
    out += '\n';
  }
  return out;
}

CsvTable parse_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  const std::string expected = "# format_version=" + std::to_string(kArtifactFormatVersion);
  if (lines.empty() || lines.front().rfind("# format_version=", 0) != 0)
    throw UnsupportedVersion("CSV is missing its format_version line");
  if (lines.front() != expected)
    throw UnsupportedVersion("unsupported CSV " + std::string(lines.front().substr(2)));
  if (lines.size() < 2) throw ParseError("CSV is missing its header row");

  auto split = [](std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    return cells;
  };

  CsvTable table;
  for (auto cell : split(lines[1])) table.header.emplace_back(cell);
  for (std::size_t i = 2; i < lines.size(); ++i) {
    auto cells = split(lines[i]);
    if (cells.size() != table.header.size())
      throw ParseError("CSV row " + std::to_string(i + 1) + " has " + std::to_string(cells.size()) +
                       " cells, expected " + std::to_string(table.header.size()));
    table.rows.emplace_back(cells.begin(), cells.end());
  }
  return table;
}

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCode::InvalidArgument, "SHA-256 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

}  // namespace sbd
