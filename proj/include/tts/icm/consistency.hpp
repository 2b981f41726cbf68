// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tts/icm/knowledge.hpp"
#include "tts/plant/plant.hpp"

namespace tts::icm {

/// tau_min <= value <= tau_max, both bounds inclusive. Throws
/// Error(SensorMismatch) if the reading and the record name different sensors.
bool consistency_check(const plant::SensorReading& reading, const CalibrationRecord& cal);

}  // namespace tts::icm
