#pragma once

#include <stdexcept>
#include <string>

namespace hopflab {

/// Invalid input detected at construction or configuration time.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Base for failures that happen while computing (exit status 2 in the CLI).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Kernel evaluated at (numerically) coincident points.
class SingularEvaluationError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Two curves come closer than the singular floor of the quadrature.
class ProximityError : public NumericalError {
public:
    ProximityError(const std::string& what, double dist) : NumericalError(what), distance(dist) {}
    double distance;
};

/// Projection direction is not generic for the crossing count.
class GenericityError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

} // namespace hopflab
