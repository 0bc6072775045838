// Copyright (C) 2026 The dynlat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace dynlat {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Unknown preset or key.
class NotFound : public Error {
public:
    using Error::Error;
};

// Structurally invalid spec (divisibility, non-positive sizes).
class InvalidShape : public Error {
public:
    using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

// Tensor or mask dimensions that do not agree at run time.
class ShapeError : public Error {
public:
    using Error::Error;
};

}  // namespace dynlat
