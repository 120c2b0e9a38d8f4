#ifndef QMCTUMOR_ERRORS_HPP
#define QMCTUMOR_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <vector>

namespace qmctumor {

/// Bad argument to a library call (maps to CLI exit code 2).
class InvalidArgument : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input file. Carries the 1-based line number when known.
class FormatError : public std::runtime_error {
public:
  FormatError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  explicit FormatError(const std::string& what) : std::runtime_error(what), line_(0) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// Input parsed fine but violates a structural requirement.
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Base for failures of numerical procedures (maps to CLI exit code 3).
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A diffusion coefficient sample was not strictly positive.
class CoefficientBoundError : public NumericalError {
public:
  using NumericalError::NumericalError;
};

class SingularOperatorError : public NumericalError {
public:
  using NumericalError::NumericalError;
};

/// Newton iteration failed to reach the residual tolerance.
class NonconvergenceError : public NumericalError {
public:
  NonconvergenceError(const std::string& what, std::vector<double> residual_trace)
      : NumericalError(what), trace_(std::move(residual_trace)) {}
  const std::vector<double>& residual_trace() const noexcept { return trace_; }

private:
  std::vector<double> trace_;
};

} // namespace qmctumor

#endif
