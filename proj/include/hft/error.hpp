// Copyright (C) 2026 The hybrid-stream Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace hft {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand dimensions do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Bad magic, header or manifest in a serialized artifact.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Payload shorter or longer than its header claims.
class LengthError : public Error {
public:
    using Error::Error;
};

/// A caller broke a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Chunks appended out of order.
class SequenceError : public Error {
public:
    using Error::Error;
};

/// Singular or non-finite numerics.
class NumericError : public Error {
public:
    using Error::Error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

namespace detail {

template <typename... Args>
std::string concat(const Args&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

}  // namespace detail

/// Throws `E` with the streamed message when `cond` is false.
template <typename E, typename... Args>
void require(bool cond, const Args&... args) {
    if (!cond) {
        throw E(detail::concat(args...));
    }
}

}  // namespace hft
