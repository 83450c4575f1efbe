#pragma once

#include <stdexcept>
#include <string>

namespace multishot {

// Malformed or inconsistent input data (files, schemas, preconditions on
// datasets). CLI maps this to exit code 2.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite energies, degenerate geometry and the like. CLI maps this to
// exit code 3.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace multishot
