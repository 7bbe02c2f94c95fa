#pragma once

#include <stdexcept>
#include <string>

namespace polyalign {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration or precondition on user-supplied parameters.
class ConfigError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

// A vector that must have positive norm was (numerically) zero, e.g. an
// encoder that collapsed to the origin.
class DegenerateInputError : public Error {
public:
    DegenerateInputError(const std::string& what, std::size_t index)
        : Error(what + " (index " + std::to_string(index) + ")"), index_(index) {}
    explicit DegenerateInputError(const std::string& what) : Error(what) {}

    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_ = 0;
};

// Non-finite loss, diverging weights and similar numerical failures.
class NumericError : public Error {
public:
    using Error::Error;
};

enum class FormatErrorKind { io, bad_magic, version_mismatch, truncated, malformed };

class FormatError : public Error {
public:
    FormatError(FormatErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}

    FormatErrorKind kind() const noexcept { return kind_; }

private:
    FormatErrorKind kind_;
};

} // namespace polyalign
