#include "protst/common.hpp"

namespace protst {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kInternal: return "InternalError";
    case ErrorCode::kSequenceTooLong: return "SequenceTooLong";
    case ErrorCode::kEmptyMaskPlan: return "EmptyMaskPlan";
    case ErrorCode::kLabelRange: return "LabelRangeError";
    case ErrorCode::kDegenerateLabel: return "DegenerateLabel";
    case ErrorCode::kZeroNorm: return "ZeroNorm";
    case ErrorCode::kIncompatibleCheckpoint: return "IncompatibleCheckpoint";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kGraphInvalid: return "GraphInvalid";
    case ErrorCode::kChecksum: return "ChecksumError";
    case ErrorCode::kVersion: return "VersionError";
    case ErrorCode::kEmptyEvaluation: return "EmptyEvaluation";
    case ErrorCode::kMissingLabel: return "MissingLabel";
    case ErrorCode::kParse: return "ParseError";
    case ErrorCode::kCannotSplit: return "CannotSplit";
    case ErrorCode::kIo: return "IoError";
  }
  return "Error";
}

}  // namespace protst
