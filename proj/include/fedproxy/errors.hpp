#pragma once

#include <stdexcept>
#include <string>

namespace fedproxy {

// Error taxonomy mirrors the CLI exit codes: config/usage problems exit 2,
// numerical divergence exits 3, file format and I/O problems exit 4.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Layout / shape mismatches between parameter vectors or batches.
class DimError : public ConfigError {
 public:
  explicit DimError(const std::string& msg) : ConfigError(msg) {}
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& msg, long step) : Error(msg), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace fedproxy
