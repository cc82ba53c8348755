#pragma once

#include <stdexcept>
#include <string>

namespace qlayout {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class TopologyError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what), line_(0) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

class UnsupportedGate : public Error {
 public:
  UnsupportedGate(const std::string& gate, int line)
      : Error("line " + std::to_string(line) + ": unsupported gate '" + gate + "'"),
        gate_(gate) {}

  const std::string& gate() const noexcept { return gate_; }

 private:
  std::string gate_;
};

class EmptyCircuit : public Error {
 public:
  using Error::Error;
};

class ConstraintViolation : public Error {
 public:
  using Error::Error;
};

// A layout with at least one unassigned logical qubit.
class IncompleteLayout : public ConstraintViolation {
 public:
  using ConstraintViolation::ConstraintViolation;
};

class TooLarge : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class InfeasibleState : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace qlayout
