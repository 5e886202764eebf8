#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mtk {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Arguments violate an operation's preconditions.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A conditional probability was requested on an empty conditioning set.
class UndefinedConditional : public Error {
 public:
  using Error::Error;
};

/// A binary or JSON file is malformed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidInput(message);
}

}  // namespace mtk
