#include "sallie/error.hpp"

namespace sallie {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "io";
    case ErrorCode::kMissingFile: return "missing-file";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kUnsupportedVersion: return "unsupported-version";
    case ErrorCode::kManifestInconsistent: return "manifest-inconsistent";
    case ErrorCode::kSizeMismatch: return "size-mismatch";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kCorrupt: return "corrupt";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kRankDeficient: return "rank-deficient";
    case ErrorCode::kZeroNorm: return "zero-norm";
    case ErrorCode::kMissingModality: return "missing-modality";
    case ErrorCode::kMissingClass: return "missing-class";
    case ErrorCode::kNonConvergence: return "non-convergence";
    case ErrorCode::kInfeasible: return "infeasible";
  }
  return "unknown";
}

}  // namespace sallie
