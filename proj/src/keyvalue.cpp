// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#include "evkit/keyvalue.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "evkit/error.hpp"

namespace evkit::kv {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::vector<Entry> parse(std::string_view text) {
  std::vector<Entry> out;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw InvalidArgument("config line " + std::to_string(line_no) + ": expected key=value");
    }
    Entry e{trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)),
            line_no};
    if (e.key.empty()) {
      throw InvalidArgument("config line " + std::to_string(line_no) + ": empty key");
    }
    if (!seen.insert(e.key).second) throw InvalidArgument("config key '" + e.key + "' given twice");
    out.push_back(std::move(e));
  }
  return out;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t to_count(const Entry& e) {
  std::size_t out = 0;
  const auto& v = e.value;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw InvalidArgument("config key '" + e.key + "': expected a non-negative integer, got '" + v +
                          "'");
  }
  return out;
}

double to_real(const Entry& e) {
  double out = 0;
  const auto& v = e.value;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    throw InvalidArgument("config key '" + e.key + "': expected a finite number, got '" + v + "'");
  }
  return out;
}

void unknown_key(const Entry& e) { throw InvalidArgument("unknown config key '" + e.key + "'"); }

std::string format_real(double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

}  // namespace evkit::kv
