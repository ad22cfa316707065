#pragma once

#include <stdexcept>
#include <string>

namespace sensitest {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Operation not permitted in the current design/session state.
class StateError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration; `field` names the offending entry when known.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg, std::string field = {})
        : Error(field.empty() ? msg : field + ": " + msg), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Base of the "statistical failure" family (CLI exit code 3).
class StatisticalError : public Error {
public:
    using Error::Error;
};

/// Maximum likelihood estimate does not exist or did not converge.
class UndefinedMleError : public StatisticalError {
public:
    using StatisticalError::StatisticalError;
};

/// Slope estimate is not positive, so the quantile is not identifiable.
class NonIdentifiableError : public StatisticalError {
public:
    using StatisticalError::StatisticalError;
};

/// Target probability outside the attained range of a fitted curve.
class OutOfRangeError : public StatisticalError {
public:
    OutOfRangeError(const std::string& msg, double lo, double hi)
        : StatisticalError(msg), lo_(lo), hi_(hi) {}
    double low() const noexcept { return lo_; }
    double high() const noexcept { return hi_; }

private:
    double lo_;
    double hi_;
};

}  // namespace sensitest
