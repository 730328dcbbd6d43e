#pragma once

#include <stdexcept>
#include <string>

namespace carl {

// Error taxonomy mapped to CLI exit codes: config=2, data=3, numeric=4.
// ContractError marks a violated API precondition (a caller bug, not bad input).

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace carl
