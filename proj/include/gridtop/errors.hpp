#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gridtop {

/// Base class for every error raised by the library.
class error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A grid or forest violates a structural invariant (cycle, missing substation, ...).
class structural_error : public error {
  public:
    using error::error;
};

/// An argument lies outside an operation's domain (unknown node, open edge, size mismatch).
class domain_error : public error {
  public:
    using error::error;
};

/// The injection model is not a valid distribution (non-PSD covariance, bad shapes).
class model_error : public error {
  public:
    using error::error;
};

/// An iterative solve did not reach its tolerance.
class convergence_error : public error {
  public:
    convergence_error(const std::string& what, double residual, int iterations)
        : error(what), residual_(residual), iterations_(iterations) {}

    double residual() const noexcept { return residual_; }
    int iterations() const noexcept { return iterations_; }

  private:
    double residual_;
    int iterations_;
};

/// A DistFlow iterate produced a non-positive squared voltage.
class infeasible_state_error : public error {
  public:
    using error::error;
};

/// Malformed input text. `line()` is 1-based, 0 when unknown.
class parse_error : public error {
  public:
    parse_error(const std::string& what, std::size_t line)
        : error(line > 0 ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

/// Well-formed input that describes an invalid grid or forest.
class validation_error : public error {
  public:
    validation_error(const std::string& what, std::size_t line = 0)
        : error(line > 0 ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

}  // namespace gridtop
