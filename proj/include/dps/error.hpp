// Copyright 2026 The dps Authors.
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

namespace dps {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape disagreement between tensors (matmul inner dims, broadcast, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A softmax row with every position masked out.
class InvalidMaskError : public Error {
 public:
  using Error::Error;
};

// API misuse: non-scalar loss, querying a disabled path, ...
class ContractError : public Error {
 public:
  using Error::Error;
};

// Bad configuration value or unknown key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Token id outside the vocabulary table.
class VocabularyError : public Error {
 public:
  using Error::Error;
};

// Sequence longer than the position table.
class LengthError : public Error {
 public:
  using Error::Error;
};

// Malformed or misaligned corpus files.
class CorpusError : public Error {
 public:
  using Error::Error;
};

// Invalid numeric payload (non-stochastic attention row, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// Checkpoint version or layout mismatch.
class VersionError : public Error {
 public:
  using Error::Error;
};

// File system failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// Training diverged or produced non-finite gradients.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A batch with no real target tokens.
class EmptyBatchError : public Error {
 public:
  using Error::Error;
};

}  // namespace dps
