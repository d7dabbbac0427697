#pragma once

#include <stdexcept>
#include <string>

namespace ganguards {

/// Raised when an operation is called with arguments outside its contract.
/// The CLI maps this to exit code 2.
class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a persisted artifact fails its content-hash check.
class CorruptionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A metric could not be evaluated (non-finite features, failed matrix root).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw PreconditionError(message);
}

}  // namespace ganguards
