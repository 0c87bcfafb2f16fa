#pragma once

#include <stdexcept>
#include <string>

namespace dvae {

// Base for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/matrix dimensions do not line up.
class ShapeError : public Error {
public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Bad arguments or unusable configuration.
class UsageError : public Error {
public:
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

// Malformed or truncated file contents.
class FormatError : public Error {
public:
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Filesystem-level failure (open/read/write).
class IoError : public Error {
public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Numerical routine failed (non-convergence, NaN, ...).
class NumericError : public Error {
public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

class NotPsdError : public NumericError {
public:
  explicit NotPsdError(const std::string& msg) : NumericError(msg) {}
};

// Too few frames/samples for the requested fit.
class InsufficientDataError : public UsageError {
public:
  explicit InsufficientDataError(const std::string& msg) : UsageError(msg) {}
};

// Model or data is rank-deficient in a way the algorithm cannot use.
class DegenerateError : public NumericError {
public:
  explicit DegenerateError(const std::string& msg) : NumericError(msg) {}
};

// Requested covariance structure has no valid noise factor.
class InfeasibleCovarianceError : public NumericError {
public:
  explicit InfeasibleCovarianceError(const std::string& msg) : NumericError(msg) {}
};

// Training produced a non-finite loss.
class TrainingDivergedError : public NumericError {
public:
  explicit TrainingDivergedError(const std::string& msg) : NumericError(msg) {}
};

}  // namespace dvae
