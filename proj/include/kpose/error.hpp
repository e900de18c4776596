#pragma once

#include <stdexcept>
#include <string>

namespace kpose {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  DegenerateConfiguration,
  DegenerateInit,
  BehindCamera,
  NumericalFailure,
  TooFewKeypoints,
  EmptyCrop,
  InsufficientOverlap,
  Io,
  Parse,
};

const char* to_string(ErrorCode code);

// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace kpose
