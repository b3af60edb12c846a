#pragma once

#include <stdexcept>
#include <string>

namespace twostage {

// Base of every error the toolkit throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad or inconsistent input: malformed files, violated preconditions,
// too few observations for the requested quantity.
class InputError : public Error {
public:
    using Error::Error;
};

// The requested design cannot reach the target precision.
class InfeasibleError : public Error {
public:
    using Error::Error;
};

// A numerical procedure failed to produce a result. Carries the last
// iterate when one exists.
class NumericalError : public Error {
public:
    NumericalError(const std::string& what, double last_iterate)
        : Error(what), last_iterate_(last_iterate) {}
    explicit NumericalError(const std::string& what) : Error(what) {}

    double last_iterate() const noexcept { return last_iterate_; }

private:
    double last_iterate_ = 0.0;
};

} // namespace twostage
