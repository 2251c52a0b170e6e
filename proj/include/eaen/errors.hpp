#pragma once

#include <stdexcept>
#include <string>

namespace eaen {

// Process exit codes used by the command-line tool.
enum class ExitCode : int { kOk = 0, kConfig = 1, kContract = 2, kNumeric = 3 };

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept = 0;
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kConfig; }
};

// Shape or protocol mismatch between components (wrong n, stale caches, ...).
class ContractError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kContract; }
};

// Input data does not satisfy what an operation needs.
class DataError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kContract; }
};

// Episode-level protocol violation, e.g. a class with no labeled shots.
class ProtocolError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kContract; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kNumeric; }
};

class IoError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kConfig; }
};

}  // namespace eaen
