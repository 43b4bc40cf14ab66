// Copyright 2026 The sipred Authors. All rights reserved.
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

#ifndef SIPRED_ERROR_H_
#define SIPRED_ERROR_H_

#include <stdexcept>
#include <string>

namespace sipred {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated a documented precondition (bad argument, wrong shape).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// File could not be read, written or decoded.
class IoError : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

/// A feature backend could not be provided.
class BackendUnavailable : public Error {
 public:
  enum class Reason { kNotInstalled, kLoadFailed };

  BackendUnavailable(Reason reason, const std::string& what)
      : Error(what), reason_(reason) {}

  Reason reason() const { return reason_; }

 private:
  Reason reason_;
};

/// Raised when a required feature cache entry does not exist.
class CacheMiss : public Error {
 public:
  using Error::Error;
};

}  // namespace sipred

#endif  // SIPRED_ERROR_H_
