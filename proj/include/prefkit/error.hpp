// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prefkit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file or record. `line()` is 1-based, 0 when unknown.
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg, std::size_t line = 0)
        : Error(line == 0 ? msg : "line " + std::to_string(line) + ": " + msg), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Precondition violation on an API argument (empty batch, bad config value, ...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

}  // namespace prefkit
