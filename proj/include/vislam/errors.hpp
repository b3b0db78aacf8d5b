#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vislam {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// The motion does not excite the unknowns (rank-deficient normal equations).
class DegenerateMotion : public Error {
 public:
  using Error::Error;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

class NumericalFailure : public Error {
 public:
  using Error::Error;
};

class TrackingLost : public Error {
 public:
  TrackingLost(double timestamp, const std::string& what)
      : Error(what), timestamp_(timestamp) {}
  double timestamp() const { return timestamp_; }

 private:
  double timestamp_;
};

/// Malformed input file; carries the 1-based line number when known (0 otherwise).
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace vislam
