#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedmerge {

/// Models (or a model and a dataset) whose structures cannot be combined.
class IncompatibleArchitectureError : public std::runtime_error {
 public:
  explicit IncompatibleArchitectureError(const std::string& what)
      : std::runtime_error(what) {}
};

/// A public operation produced or encountered a non-finite value.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

class TrainingDivergedError : public std::runtime_error {
 public:
  TrainingDivergedError(std::size_t epoch, const std::string& what)
      : std::runtime_error(what), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Raised when an exact computation is requested beyond its feasible size.
class CapacityError : public std::runtime_error {
 public:
  explicit CapacityError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fedmerge
