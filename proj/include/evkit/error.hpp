// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The evkit Authors

#pragma once

#include <stdexcept>
#include <string>

namespace evkit {

/// Base of every error raised by the library. The category maps onto the
/// CLI exit code.
class Error : public std::runtime_error {
 public:
  enum class Category { kInvalid = 2, kIo = 3, kNumeric = 4 };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  Category category_;
};

/// Bad arguments, shapes, configuration or malformed input data.
class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what)
      : Error(Category::kInvalid, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(Category::kIo, what) {}
};

/// NaN/Inf in a computation, or training divergence.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(Category::kNumeric, what) {}
};

}  // namespace evkit
