#include "ppcreg/errors.hpp"

namespace ppcreg {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kPointBehindSource: return "PointBehindSource";
    case ErrorCode::kEmptySurface: return "EmptySurface";
    case ErrorCode::kImageTooSmall: return "ImageTooSmall";
    case ErrorCode::kDegenerateWeights: return "DegenerateWeights";
    case ErrorCode::kEmptySystem: return "EmptySystem";
    case ErrorCode::kEmptyPointSet: return "EmptyPointSet";
    case ErrorCode::kUndefinedReduction: return "UndefinedReduction";
    case ErrorCode::kBisectionFailed: return "BisectionFailed";
    case ErrorCode::kMalformedHeader: return "MalformedHeader";
    case ErrorCode::kTruncatedPayload: return "TruncatedPayload";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kByteOrderMismatch: return "ByteOrderMismatch";
    case ErrorCode::kUnsupportedType: return "UnsupportedType";
    case ErrorCode::kIoFailure: return "IoFailure";
  }
  return "Unknown";
}

}  // namespace ppcreg
