// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scmd {

enum class ErrorKind {
  kDimension,
  kShape,
  kParameter,
  kDomain,
  kDegenerateVector,
  kContract,
  kLookup,
  kTemplate,
  kConfiguration,
  kCapacity,
  kBadMagic,
  kTruncated,
  kCrcMismatch,
  kValidation,
  kIo,
  kDivergence,
};

std::string_view to_string(ErrorKind kind);

/// Library-wide exception. `kind()` is stable and is what the CLI reports.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace scmd
