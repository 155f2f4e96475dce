#include "upoe/error.hpp"

namespace upoe {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NoComplement: return "NoComplement";
    case ErrorCode::DegenerateDirection: return "DegenerateDirection";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::SingularUpdate: return "SingularUpdate";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::NotOrthogonal: return "NotOrthogonal";
    case ErrorCode::ModelFull: return "ModelFull";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::BadSplit: return "BadSplit";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::NoUsefulDirection: return "NoUsefulDirection";
    case ErrorCode::DegenerateCovariance: return "DegenerateCovariance";
    case ErrorCode::NotInvertible: return "NotInvertible";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace upoe
