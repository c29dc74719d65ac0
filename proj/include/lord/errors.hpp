#pragma once

#include <stdexcept>
#include <string>

namespace lord {

// Error categories map to CLI exit codes: ConfigError -> 2, DataError -> 3,
// NumericError -> 4. ContractError signals a violated precondition and is a
// programming error at the call site, not an input problem.

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class ContractError : public std::logic_error {
public:
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace lord
