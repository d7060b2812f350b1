#pragma once

#include <stdexcept>
#include <string>

namespace embp {

// Bad arguments, malformed configuration, shape mismatches.
// The CLI maps this family to exit code 2.
class InvalidParameter : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Guard for the trellis / exhaustive-enumeration size limits.
class StateSpaceTooLarge : public InvalidParameter {
public:
    using InvalidParameter::InvalidParameter;
};

// Non-finite values produced inside an iterative routine.
// Carries the iteration index at which the failure was detected.
class NumericalFailure : public std::runtime_error {
public:
    NumericalFailure(const std::string& what, int iteration)
        : std::runtime_error(what + " (iteration " + std::to_string(iteration) + ")"),
          iteration_(iteration) {}
    int iteration() const noexcept { return iteration_; }

private:
    int iteration_;
};

// Least-squares system without a unique solution (e.g. too few usable pilot rows).
class IdentifiabilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Zero posterior mass where an EM update denominator needs it.
class DegeneratePosterior : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace embp
