#pragma once

#include <stdexcept>
#include <string>

namespace metapatch {

/// Input violates a documented precondition (shape, sign, index range).
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numerical procedure could not deliver a result at the requested accuracy.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Linear system is singular or too ill-conditioned to trust.
class SingularMatrixError : public NumericalError {
public:
    SingularMatrixError(const std::string& what, double condition)
        : NumericalError(what + " (condition estimate " + std::to_string(condition) + ")")
        , condition_(condition)
    {
    }

    double condition() const noexcept { return condition_; }

private:
    double condition_;
};

/// Malformed or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace metapatch
