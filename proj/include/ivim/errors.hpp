// errors.hpp - error taxonomy shared by all pipeline stages.
#pragma once

#include <stdexcept>
#include <string>

namespace ivim {

// Bad inputs: geometry mismatches, invalid configs, malformed files. CLI exit code 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical breakdown at runtime: non-finite values, singular systems. CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace ivim
