#pragma once

#include <stdexcept>
#include <string>

namespace ezbsde {

/// Argument outside the mathematical domain of a formula (v >= 0, d <= 0, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Model or solver parameters that fail validation.
class InvalidParameter : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Numerical breakdown: Newton non-convergence, rank-deficient regression,
/// singular covariance, overflow of an exponential term.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class OverflowError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class DegenerateCovariance : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace ezbsde
