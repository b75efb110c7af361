// Copyright 2026 The esr-pcg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace esr {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Malformed Matrix Market input. `line()` is 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Cholesky met a non-positive pivot, or a matrix failed the structural SPD checks.
class NotSpdError : public Error {
 public:
  using Error::Error;
};

/// pᵀAp ≤ 0 or a NaN appeared in the recurrence.
class BreakdownError : public Error {
 public:
  using Error::Error;
};

/// Some lost datum has no surviving copy, or more nodes failed than the plan tolerates.
class UnrecoverableError : public Error {
 public:
  using Error::Error;
};

/// Inner subsystem solve did not reach its tolerance.
class RecoveryError : public Error {
 public:
  RecoveryError(const std::string& what, double inner_residual)
      : Error(what), inner_residual_(inner_residual) {}
  double inner_residual() const noexcept { return inner_residual_; }

 private:
  double inner_residual_;
};

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

}  // namespace esr
