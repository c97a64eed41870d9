#pragma once

#include <exception>
#include <stdexcept>

namespace repq {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed files: unreadable manifests, missing fields, blob size mismatches.
class FormatError : public Error {
public:
    using Error::Error;
};

// Tensor dimension problems: layout mismatches, incompatible channel counts.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Bad numbers: non-finite inputs, failed numeric checks.
class NumericError : public Error {
public:
    using Error::Error;
};

// Invalid arguments or configuration values.
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Ill-formed model structure: branch shape rules, fused/unfused mismatches.
class StructuralError : public Error {
public:
    using Error::Error;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int generic = 1;
inline constexpr int format = 2;
inline constexpr int shape = 3;
inline constexpr int numeric = 4;
inline constexpr int config = 5;
inline constexpr int structural = 6;
} // namespace exit_code

// Maps an exception to the process exit code used by the command line tool.
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const FormatError*>(&e)) return exit_code::format;
    if (dynamic_cast<const ShapeError*>(&e)) return exit_code::shape;
    if (dynamic_cast<const NumericError*>(&e)) return exit_code::numeric;
    if (dynamic_cast<const ArgumentError*>(&e)) return exit_code::config;
    if (dynamic_cast<const StructuralError*>(&e)) return exit_code::structural;
    return exit_code::generic;
}

} // namespace repq
