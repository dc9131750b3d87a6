#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace detox {

/// Base class of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller passed a value outside an operation's domain.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Input file or stream could not be parsed. Carries the 1-based line number (0 when not line-oriented).
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// A record carries a label that is not one of the declared classes.
class UnknownLabel : public ParseError {
public:
    UnknownLabel(std::size_t line, const std::string& label)
        : ParseError(line, "unknown label '" + label + "'") {}
};

/// Statistic is undefined on the given data (constant input, zero variance, single class).
class DegenerateInput : public Error {
public:
    using Error::Error;
};

/// Components that must share a vocabulary do not.
class VocabularyMismatch : public Error {
public:
    using Error::Error;
};

/// Remote provider failed or answered with a payload that violates the wire schema.
class RemoteError : public Error {
public:
    using Error::Error;
};

/// Persisted model directory is missing, incomplete, or of another version.
class BundleError : public Error {
public:
    using Error::Error;
};

} // namespace detox
