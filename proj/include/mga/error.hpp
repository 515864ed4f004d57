#pragma once

#include <stdexcept>
#include <string>

namespace mga {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Tensor operation received non-conforming shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Numeric domain violation (log of a non-positive value, non-finite loss, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

// API misuse: non-scalar backward, tensors from different tapes, ...
class ContractError : public Error {
public:
    using Error::Error;
};

// Invalid user-supplied configuration or arguments. Maps to exit code 1 in the CLI.
class ConfigError : public Error {
public:
    using Error::Error;
};

// File system / parse problems for user-supplied files. Maps to exit code 1 in the CLI.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace mga
