// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace qwen2 {

/// Base of every error raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A scalar or structural parameter is out of its valid range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A stateful object (KV cache) was driven out of order.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Invalid model / MoE configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad user input (token id out of range, unknown token id, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Position pair violates j <= i.
class OrderingError : public Error {
 public:
  using Error::Error;
};

/// Malformed or corrupted file. Carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace qwen2
