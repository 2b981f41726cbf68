// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tts {

/// Error taxonomy shared by every module. Each code maps onto one of the
/// named failure modes of an operation; the service layer maps them onto
/// status codes and the CLI onto exit codes.
enum class Errc {
  UnknownActuator,
  NonFiniteCommand,
  UnknownSensor,
  SlotOccupied,
  SensorMismatch,
  UnknownReference,
  Unauthorized,
  UnknownRule,
  MalformedPredicate,
  MissingSignal,
  EmptyBatch,
  InvalidSpec,
  LedgerUnavailable,
  SetpointOutOfBounds,
  ConfigInvalid,
  TraceParse,
  CalibrationGap,
  NotTunable,
  BudgetExceeded,
  ValidationFailed,
  NotFound,
  Malformed,
  InvalidArgument,
  Io,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace tts
