// Copyright 2026 The pastssm Authors.
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

namespace pastssm {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file content. Carries the 1-based line (CSV) or 0-based record
/// index (binary) where parsing stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t where)
      : Error(what + " (at " + std::to_string(where) + ")"), where_(where) {}
  std::size_t where() const noexcept { return where_; }

 private:
  std::size_t where_;
};

/// Timestamps went backwards. `record()` is 1-based over data records.
class OrderError : public Error {
 public:
  OrderError(const std::string& what, std::size_t record)
      : Error(what + " (record " + std::to_string(record) + ")"), record_(record) {}
  std::size_t record() const noexcept { return record_; }

 private:
  std::size_t record_;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};
class ArgumentError : public Error {
 public:
  using Error::Error;
};
class GeometryError : public Error {
 public:
  using Error::Error;
};
class CapacityError : public Error {
 public:
  using Error::Error;
};
class ShapeError : public Error {
 public:
  using Error::Error;
};
class NumericError : public Error {
 public:
  using Error::Error;
};
class DomainError : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};
class EmptyStreamError : public Error {
 public:
  using Error::Error;
};
/// Fewer candidate frames than frames to select.
class SelectionError : public Error {
 public:
  using Error::Error;
};
/// A training or evaluation step failed; the message names the sample,
/// epoch and step.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace pastssm
