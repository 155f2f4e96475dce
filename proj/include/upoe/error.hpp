#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace upoe {

enum class ErrorCode {
  RankDeficient,
  NoComplement,
  DegenerateDirection,
  OutOfDomain,
  SingularUpdate,
  DimensionMismatch,
  EmptyDataset,
  NotOrthogonal,
  ModelFull,
  IoError,
  FormatError,
  ParseError,
  BadSplit,
  Diverged,
  NoUsefulDirection,
  DegenerateCovariance,
  NotInvertible,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Single exception type for the library. `component()` names the module
/// that raised it so front ends can report where a run failed.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string_view component, const std::string& what)
      : std::runtime_error(std::string(component) + ": " + std::string(to_string(code)) +
                           ": " + what),
        code_(code),
        component_(component) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& component() const noexcept { return component_; }

 private:
  ErrorCode code_;
  std::string component_;
};

}  // namespace upoe
