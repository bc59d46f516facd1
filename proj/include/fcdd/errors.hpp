#pragma once

#include <stdexcept>
#include <string>

namespace fcdd {

// Invalid layer/kernel/config parameters detected before any computation.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: shape mismatches, non-scalar backward roots, single-class AUC.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf encountered in a forward value or gradient.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset/checkpoint file problems; the message names the offending entry.
class LoadError : public std::runtime_error {
 public:
  explicit LoadError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fcdd
