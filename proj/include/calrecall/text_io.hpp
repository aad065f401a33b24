#pragma once

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "calrecall/error.hpp"

namespace calrecall {

/// Calls fn(line, line_number) for every line, with any trailing '\r' removed.
void for_each_line(const std::filesystem::path& path,
                   const std::function<void(std::string_view, std::size_t)>& fn);

std::ofstream open_for_write(const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_int(std::string_view text);

std::vector<std::string_view> split(std::string_view text, char sep);
/// Splits on runs of spaces/tabs, dropping empty fields.
std::vector<std::string_view> split_whitespace(std::string_view text);

std::string read_file(const std::filesystem::path& path);

}  // namespace calrecall
