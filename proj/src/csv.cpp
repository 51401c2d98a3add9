#include "pfotgn/csv.hpp"

#include <charconv>
#include <cmath>

#include <fmt/core.h>

namespace pfotgn::csv {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

}  // namespace

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return fields;
}

void read_rows(const std::filesystem::path& path,
               const std::vector<std::string>& expected_header,
               const std::function<void(const std::vector<std::string_view>&,
                                        std::size_t)>& row) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError("'" + path.string() + "' is missing its header row");
  }
  auto header = split(line);
  bool ok = header.size() == expected_header.size();
  for (std::size_t i = 0; ok && i < header.size(); ++i) ok = header[i] == expected_header[i];
  if (!ok) {
    throw ParseError(fmt::format("'{}': unexpected header '{}'", path.string(), trim(line)));
  }
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (trim(line).empty()) continue;
    row(split(line), line_number);
  }
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");
  return out;
}

double parse_double(std::string_view text, std::size_t line_number) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) {
    throw ParseError(fmt::format("line {}: malformed number '{}'", line_number, text));
  }
  return value;
}

std::int64_t parse_int(std::string_view text, std::size_t line_number) {
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError(fmt::format("line {}: malformed integer '{}'", line_number, text));
  }
  return value;
}

}  // namespace pfotgn::csv
