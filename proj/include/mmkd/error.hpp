#pragma once

#include <stdexcept>
#include <string>

#include "mmkd/config.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

enum class ErrorKind {
  Dimension,  // tensor shapes do not agree
  Parameter,  // scalar argument out of its domain
  Config,     // invalid network / run configuration
  Data,       // invalid sample, label or batch contents
  Format,     // bad magic or version in a persisted file
  Manifest,   // manifest unreadable or inconsistent with its payload
  Shape,      // dataset metadata inconsistent with stored arrays
  Truncated,  // payload shorter than its manifest claims
  Io,
  Alignment,  // paired attention maps cannot be made shape-equal
  Usage,      // API misuse (e.g. backward on a non-scalar)
  Numeric,    // NaN or Inf produced by a primitive
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace MMKD_ABI
}  // namespace mmkd
