// Copyright 2026 The PETRA Runtime Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace petra {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not satisfy an op's precondition.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class DTypeError : public Error {
 public:
  using Error::Error;
};

/// A stage function used a primitive without a registered VJP rule.
class UnregisteredOpError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf reached the optimizer or the loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// The execution engine violated its own protocol (empty buffer on
/// backward, deadlock, a worker failure).
class ScheduleError : public Error {
 public:
  using Error::Error;
};

}  // namespace petra
