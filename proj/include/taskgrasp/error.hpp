#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace taskgrasp {

enum class ErrorCode {
  InvalidArgument,
  InvalidDepth,
  OutOfBounds,
  ShapeMismatch,
  EmptyCloud,
  SceneTooCrowded,
  InvalidInstruction,
  MalformedReasoning,
  BackendUnavailable,
  NoRelevantObject,
  ObjectNotFound,
  PartNotFound,
  NoFeasibleGrasp,
  NoCandidates,
  EmptyAffordanceRegion,
  TraceWriteError,
  IoError,
  ConfigError,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the named codes so the
/// pipeline can record it as data instead of letting it escape.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace taskgrasp
