#pragma once

#include <stdexcept>
#include <string>

namespace mates {

// Error taxonomy shared by every module. Each kind is thrown where the
// corresponding contract is violated so tests can assert the exact failure.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};
struct IndexError : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct RangeError : Error {
    using Error::Error;
};
struct ParseError : Error {
    using Error::Error;
};
struct ConvergenceError : Error {
    using Error::Error;
};
struct DegenerateTargetError : Error {
    using Error::Error;
};
struct UndefinedCorrelationError : Error {
    using Error::Error;
};
struct IOError : Error {
    using Error::Error;
};

}  // namespace mates
