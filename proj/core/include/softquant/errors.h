#ifndef SOFTQUANT_ERRORS_H_
#define SOFTQUANT_ERRORS_H_

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace softquant {

// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values, shape mismatches, invalid probability vectors.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// The Gibbs kernel or the scalings of the scaling-form solver left the
// representable range. Retry with the log-domain solver or a larger epsilon.
class UnderflowError : public Error {
 public:
  using Error::Error;
};

class MaxIterExceeded : public Error {
 public:
  MaxIterExceeded(double residual, int iterations);

  double residual() const { return residual_; }
  int iterations() const { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

// Implicit gradients requested at a point that is not a converged optimum.
class NotConverged : public Error {
 public:
  using Error::Error;
};

class SingularSchur : public Error {
 public:
  using Error::Error;
};

// s >= t for pinned quantiles.
class InvalidRange : public Error {
 public:
  using Error::Error;
};

class OverflowError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line);

  int line() const { return line_; }

 private:
  int line_;
};

// The inner multiplicative-update loop of QMFQ increased its own loss.
class InnerDivergence : public Error {
 public:
  using Error::Error;
};

// Aggregates failures of independent per-row computations.
class RowErrors : public Error {
 public:
  explicit RowErrors(std::vector<std::pair<std::size_t, std::string>> rows);

  const std::vector<std::pair<std::size_t, std::string>>& rows() const {
    return rows_;
  }

 private:
  std::vector<std::pair<std::size_t, std::string>> rows_;
};

}  // namespace softquant

#endif  // SOFTQUANT_ERRORS_H_
