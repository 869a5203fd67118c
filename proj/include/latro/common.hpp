#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace latro {

using TokenId = std::int32_t;

// Error categories map onto the CLI exit-code contract:
// config/usage -> 2, IO -> 3, everything else -> 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Raised when |prefix| + |continuation| exceeds a model's context window.
// Silent truncation would corrupt likelihood semantics, so this is fatal
// wherever it is not explicitly caught (evaluation counts it as incorrect).
class ContextOverflowError : public Error {
 public:
  explicit ContextOverflowError(const std::string& msg) : Error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

inline bool all_finite(const double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(data[i])) return false;
  }
  return true;
}

}  // namespace latro
