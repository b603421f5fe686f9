#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace etamix {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A spec (environment, feature matrix, grid, ...) violates its construction invariants.
class InvalidSpecError : public Error {
 public:
  using Error::Error;
};

class InvalidPolicyError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (stepping from a terminal, empty buffer, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// A linear system has no (unique) solution, e.g. a non-terminating episodic chain.
class NoSolutionError : public Error {
 public:
  using Error::Error;
};

class SingularityError : public Error {
 public:
  SingularityError(const std::string& what, double condition_number)
      : Error(what), condition_number_(condition_number) {}

  double condition_number() const noexcept { return condition_number_; }

 private:
  double condition_number_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::vector<double> trace)
      : Error(what), trace_(std::move(trace)) {}

  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

class NumericOverflowError : public Error {
 public:
  using Error::Error;
};

class UndefinedRankError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace etamix
