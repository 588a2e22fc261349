#pragma once

#include <stdexcept>
#include <string>

namespace tprune {

enum class ErrorCode {
  kInvalidArgument = 1,
  kShape,
  kNumeric,
  kIo,
  kFormat,
  kChecksum,
  kVersion,
  kFingerprint,
  kFloor,
  kBudget,
  kNoUsableSamples,
  kMissingCounterpart,
  kUnsupportedDepth,
};

// All library failures are reported as Error; the code survives the C boundary.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace tprune
