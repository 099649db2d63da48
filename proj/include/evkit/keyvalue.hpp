// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace evkit::kv {

struct Entry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Flat `key=value` text: `#` starts a comment, blank lines are skipped,
/// whitespace around keys and values is trimmed. Repeated keys and lines
/// without `=` raise InvalidArgument.
std::vector<Entry> parse(std::string_view text);

/// Whole file as text; IoError when unreadable.
std::string read_text(const std::filesystem::path& path);

std::size_t to_count(const Entry& e);
double to_real(const Entry& e);
[[noreturn]] void unknown_key(const Entry& e);

/// Shortest decimal text that parses back to the same double.
std::string format_real(double v);

}  // namespace evkit::kv
