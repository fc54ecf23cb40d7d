// Copyright (C) 2026 The Foresight Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace foresight {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad caller input: wrong shapes, out-of-range ids, violated preconditions.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Hash mismatch, truncated or corrupted file, wrong magic.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Non-finite intermediate or diverged training.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace foresight
