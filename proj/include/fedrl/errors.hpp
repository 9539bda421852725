// SPDX-License-Identifier: MIT
// Exception hierarchy shared by all fedrl modules.
#pragma once

#include <stdexcept>
#include <string>

namespace fedrl {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A vector/matrix argument does not match the shape the callee requires.
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& what) : Error(what) {}
};

/// An argument value is outside the callee's documented domain.
class InvalidArgument : public Error {
public:
    explicit InvalidArgument(const std::string& what) : Error(what) {}
};

/// Training produced non-finite parameters or gradients.
class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& what) : Error(what) {}
};

/// A configuration file could not be parsed or validated.
/// `line` is 1-based when the problem is tied to a specific line, 0 otherwise.
class ConfigError : public Error {
public:
    ConfigError(const std::string& what, int line = 0)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}

    int line() const noexcept { return line_; }

private:
    int line_;
};

} // namespace fedrl
