#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace servoguard {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
  using Error::Error;
};

/// Invalid parameter combination supplied by the caller.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// File could not be opened, written or renamed.
class IoError : public Error {
public:
  using Error::Error;
};

/// Non-finite or otherwise unusable numeric data.
class DataError : public Error {
public:
  using Error::Error;
};

/// Tensor shapes that do not fit the network graph.
class StructuralError : public Error {
public:
  using Error::Error;
};

class ParseError : public Error {
public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// Failure while decoding a weight or dataset container.
class LoadError : public Error {
public:
  enum class Code { bad_magic, bad_version, truncated, checksum, shape_mismatch };

  LoadError(Code code, const std::string& what) : Error(what), code_(code) {}

  Code code() const noexcept { return code_; }

private:
  Code code_;
};

class TrainingError : public Error {
public:
  TrainingError(std::size_t epoch, std::size_t batch, const std::string& what)
      : Error("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ": " + what),
        epoch_(epoch),
        batch_(batch) {}

  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

private:
  std::size_t epoch_;
  std::size_t batch_;
};

class ProtocolError : public Error {
public:
  using Error::Error;
};

}  // namespace servoguard
