// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace evkit::csv {

/// Comma-separated table. Fields holding commas or quotes are double-quoted
/// with quotes doubled; line breaks inside fields are not supported.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a named column; throws InvalidArgument if missing.
  std::size_t column(std::string_view name) const;
};

std::vector<std::string> split_line(std::string_view line);
/// A value ready to write as one field, quoted when needed.
std::string field(std::string_view value);
Table read(const std::filesystem::path& path);

double to_double(const std::string& field, std::string_view what);
long long to_int(const std::string& field, std::string_view what);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace evkit::csv
