// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace sbd {

enum class ErrorCode {
  InvalidArgument = 1,
  Shape = 2,
  Numeric = 3,
  Parse = 4,
  Io = 5,
  AlreadyExists = 6,
  UnsupportedVersion = 7,
};

// Base of every exception thrown by the library. The C API maps the code
// onto its status enum.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& w) : Error(ErrorCode::InvalidArgument, w) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error(ErrorCode::Shape, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorCode::Numeric, w) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error(ErrorCode::Parse, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCode::Io, w) {}
};
struct AlreadyExists : Error {
  explicit AlreadyExists(const std::string& w) : Error(ErrorCode::AlreadyExists, w) {}
};
struct UnsupportedVersion : Error {
  explicit UnsupportedVersion(const std::string& w) : Error(ErrorCode::UnsupportedVersion, w) {}
};

}  // namespace sbd
