#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "pfotgn/common.hpp"

namespace pfotgn::csv {

// Minimal comma-separated reader: no quoting, surrounding blanks trimmed.
std::vector<std::string_view> split(std::string_view line);

// Calls `row` for every non-empty data line after verifying the header.
// `line_number` is 1-based and counts the header.
void read_rows(const std::filesystem::path& path,
               const std::vector<std::string>& expected_header,
               const std::function<void(const std::vector<std::string_view>& fields,
                                        std::size_t line_number)>& row);

std::ofstream open_for_write(const std::filesystem::path& path);

double parse_double(std::string_view text, std::size_t line_number);
std::int64_t parse_int(std::string_view text, std::size_t line_number);

}  // namespace pfotgn::csv
