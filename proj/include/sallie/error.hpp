#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sallie {

/// Failure categories. The CLI maps each category onto a distinct exit code.
enum class ErrorCode {
  kIo,                    // read/write failure on an existing path
  kMissingFile,           // expected file or directory absent
  kParse,                 // malformed structured text
  kUnsupportedVersion,    // format_version / magic not understood
  kManifestInconsistent,  // manifest disagrees with itself or with records
  kSizeMismatch,          // layer file byte size differs from manifest
  kNonFinite,             // NaN or Inf in activations or parameters
  kCorrupt,               // truncated container or checksum failure
  kInvalidArgument,       // caller violated a precondition
  kDimensionMismatch,     // vector/matrix shapes disagree
  kRankDeficient,         // PCA asked for more components than the data supports
  kZeroNorm,              // zero vector where cosine similarity is required
  kMissingModality,       // detector has no probes for the requested modality
  kMissingClass,          // a fit needs both benign and malicious samples
  kNonConvergence,        // iterative optimizer hit its cap
  kInfeasible,            // no threshold satisfies the FPR cap
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace sallie
