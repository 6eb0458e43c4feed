// Copyright 2026 The conceptseg Authors. All Rights Reserved.
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

namespace conceptseg {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File system and decoding failures.
class IoError : public Error {
 public:
  using Error::Error;
};

class FileNotFoundError : public IoError {
 public:
  explicit FileNotFoundError(const std::string& path)
      : IoError("file not found: " + path) {}
};

class UnsupportedFormatError : public IoError {
 public:
  using IoError::IoError;
};

class CorruptDataError : public IoError {
 public:
  using IoError::IoError;
};

// Checkpoint written by an incompatible format version.
class VersionError : public IoError {
 public:
  using IoError::IoError;
};

// Precondition or shape violation by the caller.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing or inconsistent dataset contents.
class DataError : public Error {
 public:
  using Error::Error;
};

// View sampling could not find a configuration with mutual regions.
class ViewGenerationError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite loss or similar numerical breakdown during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace conceptseg
