// Copyright (c) 2026 JFE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef JFE_ERROR_H_
#define JFE_ERROR_H_

#include <stdexcept>
#include <string>

namespace jfe {

// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller broke a documented precondition (shape mismatch, bad label, ...).
class ContractViolation : public Error {
 public:
  explicit ContractViolation(const std::string& msg) : Error(msg) {}
};

// An input left the numeric domain of an operation (log of a negative
// value, division by zero, zero-norm embedding, non-finite evaluation).
class NumericDomainError : public Error {
 public:
  explicit NumericDomainError(const std::string& msg) : Error(msg) {}
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// File read/write failure; the message names the offending path.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// A waveform too short to produce a single analysis window.
class EmptyInputError : public Error {
 public:
  explicit EmptyInputError(const std::string& msg) : Error(msg) {}
};

// An utterance too short for the requested context (delta windows etc.).
class ShortUtteranceError : public Error {
 public:
  explicit ShortUtteranceError(const std::string& msg) : Error(msg) {}
};

}  // namespace jfe

#endif  // JFE_ERROR_H_
