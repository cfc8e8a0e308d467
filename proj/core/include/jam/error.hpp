#pragma once

#include <stdexcept>
#include <string>

namespace jam {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand shapes do not agree with an operation's contract.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A NaN or infinity appeared in a tensor, or a loss diverged.
class NumericError : public Error {
public:
    using Error::Error;
};

// Two ParameterSets (or checkpoints) that must match do not.
class StructureError : public Error {
public:
    using Error::Error;
};

// Malformed configuration: unknown key, bad value, schema version mismatch.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed or unsupported file contents.
class FormatError : public Error {
public:
    using Error::Error;
};

// Argument outside an operation's domain (token id out of range, k < 0, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

}  // namespace jam
