#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace nowcast {

// Input that violates a declared file or data contract. The CLI maps this
// family to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public InputError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : InputError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  explicit ParseError(const std::string& what) : InputError(what) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_ = 0;
};

class ValidationError : public InputError {
 public:
  using InputError::InputError;
};

// Numerical failure inside the penalized IRLS engine. Carries the last
// coefficient iterate so callers can inspect how far the solver got.
class FitError : public std::runtime_error {
 public:
  FitError(const std::string& what, Eigen::VectorXd last_beta = {}, int iterations = 0)
      : std::runtime_error(what), last_beta_(std::move(last_beta)), iterations_(iterations) {}

  const Eigen::VectorXd& last_beta() const { return last_beta_; }
  int iterations() const { return iterations_; }

 private:
  Eigen::VectorXd last_beta_;
  int iterations_ = 0;
};

}  // namespace nowcast
