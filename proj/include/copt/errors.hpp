#ifndef COPT_ERRORS_HPP
#define COPT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace copt {

// Operand shapes do not satisfy an operation's contract.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Input value outside an operation's mathematical domain (e.g. log of <= 0).
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

// A caller violated a documented precondition.
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values surfaced where finite ones are required (NaN loss etc.).
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// A sampling oracle exhausted its retry budget (degenerate distribution).
struct OracleTimeout : std::runtime_error {
  explicit OracleTimeout(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace copt

#endif
