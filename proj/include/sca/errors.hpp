#pragma once

#include <stdexcept>
#include <string>

namespace sca {

// Base class for every error thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape mismatch between tensors participating in an operation.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid argument value (bad hyperparameter, unsorted grid, ...).
struct ValueError : Error {
    using Error::Error;
};

// Misuse of the autodiff tape (backward twice, non-scalar root, ...).
struct GraphError : Error {
    using Error::Error;
};

// Non-finite values detected in checked mode, or a numeric routine failed.
struct NumericError : Error {
    using Error::Error;
};

// Dataset files missing, malformed, or failing verification.
struct DataError : Error {
    using Error::Error;
};

// Invalid configuration file or command-line usage.
struct ConfigError : Error {
    using Error::Error;
};

// Process exit codes used by the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitConfig = 2,
    kExitData = 3,
    kExitNumeric = 4,
};

} // namespace sca
