#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace vidflow {

/// Base class of every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Document-level errors (grammar-spec).
class SyntaxError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  SchemaError(std::string path, const std::string& message)
      : Error(path.empty() ? message : path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class ReferenceError : public Error {
 public:
  ReferenceError(std::string path, const std::string& message)
      : Error(path.empty() ? message : path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Raised by the expression parser.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t offset)
      : Error(message + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Evaluation failure. `path()` locates the failing sub-expression
/// ("root", "root.args[1]", "root.lhs", ...).
class EvalError : public Error {
 public:
  EvalError(std::string path, const std::string& message)
      : Error(path + ": " + message), path_(std::move(path)), detail_(message) {}
  const std::string& path() const noexcept { return path_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string path_;
  std::string detail_;
};

enum class CompileErrorKind { WriteToReadOnly, UnresolvedRef, Cycle, UnknownFunction, Invalid };

inline const char* to_string(CompileErrorKind kind) {
  switch (kind) {
    case CompileErrorKind::WriteToReadOnly: return "WriteToReadOnly";
    case CompileErrorKind::UnresolvedRef: return "UnresolvedRef";
    case CompileErrorKind::Cycle: return "Cycle";
    case CompileErrorKind::UnknownFunction: return "UnknownFunction";
    case CompileErrorKind::Invalid: return "Invalid";
  }
  return "?";
}

class CompileError : public Error {
 public:
  CompileError(CompileErrorKind kind, const std::string& message)
      : Error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}
  CompileErrorKind kind() const noexcept { return kind_; }

 private:
  CompileErrorKind kind_;
};

class UnknownPlayer : public Error {
 public:
  explicit UnknownPlayer(const std::string& name) : Error("unknown player '" + name + "'") {}
};

class UnknownSignal : public Error {
 public:
  explicit UnknownSignal(const std::string& name) : Error("unknown signal '" + name + "'") {}
};

// VOD errors.
class ManifestError : public Error {
 public:
  ManifestError(const std::string& message, std::size_t line)
      : Error("manifest line " + std::to_string(line) + ": " + message), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ClipError : public Error {
 public:
  using Error::Error;
};

class OutOfRange : public Error {
 public:
  using Error::Error;
};

class StaleEpoch : public Error {
 public:
  StaleEpoch(std::uint64_t requested, std::uint64_t current)
      : Error("stale epoch " + std::to_string(requested) + " (current " + std::to_string(current) + ")"),
        requested_(requested), current_(current) {}
  std::uint64_t requested() const noexcept { return requested_; }
  std::uint64_t current() const noexcept { return current_; }

 private:
  std::uint64_t requested_;
  std::uint64_t current_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace vidflow
