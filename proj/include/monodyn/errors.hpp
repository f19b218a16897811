#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace monodyn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Trajectory left the configured overflow bound or became non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// g_beta <= 0 somewhere on a range where a formula needs positivity.
class NonPositiveGradient : public Error {
 public:
  using Error::Error;
};

/// Local polynomial design singular at one or more query points.
class RankDeficientError : public Error {
 public:
  RankDeficientError(const std::string& what, std::vector<std::size_t> failed)
      : Error(what), failed_queries_(std::move(failed)) {}
  const std::vector<std::size_t>& failed_queries() const noexcept { return failed_queries_; }

 private:
  std::vector<std::size_t> failed_queries_;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

/// Regression design that cannot identify every coefficient.
class SingularDesign : public Error {
 public:
  using Error::Error;
};

/// Normal matrix J^T J not invertible.
class SingularNormalMatrix : public Error {
 public:
  SingularNormalMatrix(const std::string& what, double condition)
      : Error(what), condition_(condition) {}
  double condition_number() const noexcept { return condition_; }

 private:
  double condition_;
};

/// Starting coefficients give an infinite loss.
class InfeasibleStart : public Error {
 public:
  using Error::Error;
};

class AllCandidatesFailed : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line) : Error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace monodyn
