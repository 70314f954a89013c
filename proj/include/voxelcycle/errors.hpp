#pragma once

#include <stdexcept>
#include <string>

namespace voxelcycle {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto exit codes (2 for data/format problems, 3 for numerics).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  enum class Kind { kBadMagic, kUnknownVersion, kDtypeMismatch, kTruncated, kCorrupt, kIo };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace voxelcycle
