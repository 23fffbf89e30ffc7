#pragma once

#include <stdexcept>
#include <string>

namespace dsmsr {

// Error categories map one-to-one onto the CLI exit codes.
enum class ErrorKind { usage = 2, data = 3, checkpoint = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& what) : Error(ErrorKind::checkpoint, what) {}
};

// Raised when a bundle holds a different model kind than the caller asked for.
class BundleKindError : public CheckpointError {
 public:
  explicit BundleKindError(const std::string& what) : CheckpointError(what) {}
};

}  // namespace dsmsr
