#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace monet {

/// Base class of every error raised by the library. The CLI maps any
/// `monet::Error` to the data-error exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- package IR -----------------------------------------------------------

class SyntaxError : public Error {
 public:
  SyntaxError(std::size_t line, std::size_t col, std::string expected);

  std::size_t line() const { return line_; }
  std::size_t col() const { return col_; }
  const std::string& expected() const { return expected_; }

 private:
  std::size_t line_;
  std::size_t col_;
  std::string expected_;
};

class DuplicateComponent : public Error {
 public:
  explicit DuplicateComponent(const std::string& name)
      : Error("duplicate component: " + name), name_(name) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

class UnknownComponentRef : public Error {
 public:
  explicit UnknownComponentRef(const std::string& name)
      : Error("method references undeclared component: " + name), name_(name) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

/// A structurally invalid package (bad CFG endpoints, arity mismatch, ...).
class InvalidPackage : public Error {
 public:
  using Error::Error;
};

// ---- trace ----------------------------------------------------------------

class TraceError : public Error {
 public:
  TraceError(const std::string& what, std::size_t line)
      : Error("trace line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class TraceSyntaxError : public TraceError {
 public:
  using TraceError::TraceError;
};

class NonMonotoneSeq : public TraceError {
 public:
  explicit NonMonotoneSeq(std::size_t line)
      : TraceError("sequence number not strictly increasing", line) {}
};

class UnknownKind : public TraceError {
 public:
  UnknownKind(const std::string& kind, std::size_t line)
      : TraceError("unknown record kind '" + kind + "'", line) {}
};

// ---- graphs ---------------------------------------------------------------

class UnknownCaller : public Error {
 public:
  UnknownCaller(std::size_t seq, const std::string& caller)
      : Error("binder record " + std::to_string(seq) + ": caller '" + caller +
              "' is neither declared nor marked dynamic"),
        seq_(seq),
        caller_(caller) {}
  std::size_t seq() const { return seq_; }
  const std::string& caller() const { return caller_; }

 private:
  std::size_t seq_;
  std::string caller_;
};

class NotDecoupled : public Error {
 public:
  explicit NotDecoupled(std::size_t clusters)
      : Error("graph has " + std::to_string(clusters) +
              " app-component clusters, expected exactly one"),
        clusters_(clusters) {}
  std::size_t clusters() const { return clusters_; }

 private:
  std::size_t clusters_;
};

class CorruptGraph : public Error {
 public:
  using Error::Error;
};

// ---- store ----------------------------------------------------------------

class FormatVersionMismatch : public Error {
 public:
  FormatVersionMismatch(int found, int expected)
      : Error("store format version " + std::to_string(found) +
              ", expected " + std::to_string(expected)) {}
};

class ChecksumMismatch : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// ---- corpus ---------------------------------------------------------------

class InapplicableTransform : public Error {
 public:
  using Error::Error;
};

} // namespace monet
