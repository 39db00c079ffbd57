#ifndef GLPATH_ERROR_HPP
#define GLPATH_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace glpath {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or dimensions that do not fit an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values (architecture, training, run config).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad input data: manifests, images, label vocabularies, splits.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Manifest / CSV parse failure carrying the 1-based line number.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

enum class ImageErrorKind { BadMagic, BadHeader, BadMaxval, Truncated };

class ImageError : public DataError {
 public:
  ImageError(ImageErrorKind kind, const std::string& what)
      : DataError(what), kind_(kind) {}
  ImageErrorKind kind() const noexcept { return kind_; }

 private:
  ImageErrorKind kind_;
};

/// Raised when training produces a non-finite loss or parameter.
class TrainingError : public Error {
 public:
  using Error::Error;
};

enum class CheckpointErrorKind { Io, BadMagic, Version, Truncated, Schema, Metadata };

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what)
      : Error(what), kind_(kind) {}
  CheckpointErrorKind kind() const noexcept { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

}  // namespace glpath

#endif  // GLPATH_ERROR_HPP
