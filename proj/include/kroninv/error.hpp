#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kroninv {

enum class ErrorCode {
  DimensionMismatch,
  InvalidArgument,
  InfeasibleRanks,
  TreeMismatch,
  SizeExceeded,
  SingularMode,
  SylvesterDegenerate,
  ZeroCorrection,
  Breakdown,
  Serialization,
  Config,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-readable code; every recoverable failure in
/// the library is reported through this type.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace kroninv
