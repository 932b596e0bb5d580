#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ppcreg {

enum class ErrorCode {
  kInvalidArgument,
  kPointBehindSource,
  kEmptySurface,
  kImageTooSmall,
  kDegenerateWeights,
  kEmptySystem,
  kEmptyPointSet,
  kUndefinedReduction,
  kBisectionFailed,
  kMalformedHeader,
  kTruncatedPayload,
  kDimensionMismatch,
  kByteOrderMismatch,
  kUnsupportedType,
  kIoFailure,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ppcreg
