#pragma once

#include <stdexcept>
#include <string>

namespace mmfg {

// Failure categories map onto CLI exit codes (config 2, numerics 3, I/O 4).
enum class ErrorKind { kConfig, kNumerics, kIo };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what)
      : Error(ErrorKind::kConfig, "dimension error: " + what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error(ErrorKind::kConfig, what) {}
};

class RangeError : public Error {
 public:
  explicit RangeError(const std::string& what)
      : Error(ErrorKind::kConfig, "range error: " + what) {}
};

class UnsupportedError : public Error {
 public:
  explicit UnsupportedError(const std::string& what)
      : Error(ErrorKind::kConfig, "unsupported: " + what) {}
};

/// Non-finite value produced by a backward integration.
class BlowUpError : public Error {
 public:
  BlowUpError(std::size_t node, double t, const std::string& what)
      : Error(ErrorKind::kNumerics, what + " (node " + std::to_string(node) +
                                        ", t=" + std::to_string(t) + ")"),
        node_(node),
        time_(t) {}
  std::size_t node() const noexcept { return node_; }
  double time() const noexcept { return time_; }

 private:
  std::size_t node_;
  double time_;
};

class IllConditionedError : public Error {
 public:
  IllConditionedError(double estimate, const std::string& what)
      : Error(ErrorKind::kNumerics, what + " (condition estimate " +
                                        std::to_string(estimate) + ")"),
        estimate_(estimate) {}
  double estimate() const noexcept { return estimate_; }

 private:
  double estimate_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what)
      : Error(ErrorKind::kIo, "I/O error: " + what) {}
};

}  // namespace mmfg
