// Copyright 2026 The InvSR-Desk Authors. All Rights Reserved.
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

#include <stdexcept>
#include <string>

namespace invsr {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or inconsistent settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the domain of an operation (timestep out of range, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered, or a numerically impossible state.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed file header.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

/// Payload shorter than the header announces.
class PayloadError : public IoError {
 public:
  using IoError::IoError;
};

/// Well-formed file using a feature we do not read (e.g. 16-bit PPM).
class UnsupportedError : public IoError {
 public:
  using IoError::IoError;
};

class CheckpointError : public IoError {
 public:
  using IoError::IoError;
};

class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class VersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class TruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

}  // namespace invsr
