// SPDX-License-Identifier: Apache-2.0
#include "tts/common/error.hpp"

namespace tts {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::UnknownActuator: return "UnknownActuator";
    case Errc::NonFiniteCommand: return "NonFiniteCommand";
    case Errc::UnknownSensor: return "UnknownSensor";
    case Errc::SlotOccupied: return "SlotOccupied";
    case Errc::SensorMismatch: return "SensorMismatch";
    case Errc::UnknownReference: return "UnknownReference";
    case Errc::Unauthorized: return "Unauthorized";
    case Errc::UnknownRule: return "UnknownRule";
    case Errc::MalformedPredicate: return "MalformedPredicate";
    case Errc::MissingSignal: return "MissingSignal";
    case Errc::EmptyBatch: return "EmptyBatch";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::LedgerUnavailable: return "LedgerUnavailable";
    case Errc::SetpointOutOfBounds: return "SetpointOutOfBounds";
    case Errc::ConfigInvalid: return "ConfigInvalid";
    case Errc::TraceParse: return "TraceParse";
    case Errc::CalibrationGap: return "CalibrationGap";
    case Errc::NotTunable: return "NotTunable";
    case Errc::BudgetExceeded: return "BudgetExceeded";
    case Errc::ValidationFailed: return "ValidationFailed";
    case Errc::NotFound: return "NotFound";
    case Errc::Malformed: return "Malformed";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace tts
