#pragma once

#include <stdexcept>
#include <string>

namespace memlab {

// Iterative kernel failed to converge, or an input is degenerate for the
// requested transform (e.g. an all-zero channel under PINV).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed on-disk data. The message names the byte offset.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad experiment configuration or CLI arguments.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Work that cannot be enumerated within the supported limits.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace memlab
