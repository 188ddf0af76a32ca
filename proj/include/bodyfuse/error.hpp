#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bodyfuse {

enum class ErrorCode {
  // geometry
  NonPositiveDepth,
  OutOfImageBounds,
  BehindCamera,
  InvalidArgument,
  // pointcloud
  DimensionMismatch,
  EmptyIndex,
  DegenerateConfiguration,
  LengthMismatch,
  TooFewPoints,
  NoInliers,
  // skeleton
  GapTooLarge,
  MismatchedBody,
  TimestampOutOfRange,
  EmptySet,
  // calibration
  PreconditionViolation,
  InsufficientOverlap,
  DisconnectedSensor,
  AmbiguousPath,
  ParseError,
  InvariantViolation,
  // streams
  CorruptRecord,
  UnknownStream,
  OrderViolation,
  IoError,
  // simsensor
  InvalidScript,
  MalformedMessage,
  // wire / transport
  SchemaViolation,
  TruncatedPayload,
  Timeout,
  ConnectionRefused,
  BindFailure,
  TransportError,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace bodyfuse
