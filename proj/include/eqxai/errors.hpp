#pragma once

#include <exception>
#include <stdexcept>
#include <string>

namespace eqxai {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class GroupMismatchError : public Error {
public:
    using Error::Error;
};

/// Raised when exact enumeration is requested on a group above the cap.
/// Callers are expected to fall back to sampling.
class OrderTooLargeError : public Error {
public:
    using Error::Error;
};

class ShapeMismatchError : public Error {
public:
    using Error::Error;
};

class InvalidArgumentError : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Joins the messages of an exception and everything nested inside it,
/// outermost first, separated by ": ".
inline std::string describe(const std::exception& e) {
    std::string out = e.what();
    try {
        std::rethrow_if_nested(e);
    } catch (const std::exception& inner) {
        out += ": " + describe(inner);
    } catch (...) {
        out += ": unknown error";
    }
    return out;
}

} // namespace eqxai
