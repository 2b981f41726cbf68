// SPDX-License-Identifier: Apache-2.0
#include "tts/icm/consistency.hpp"

#include "tts/common/error.hpp"

namespace tts::icm {

bool consistency_check(const plant::SensorReading& reading, const CalibrationRecord& cal) {
  if (reading.sensor_id != cal.sensor_id) {
    throw Error(Errc::SensorMismatch,
                "reading from '" + reading.sensor_id + "' checked against '" + cal.sensor_id + "'");
  }
  return cal.tau_min <= reading.value && reading.value <= cal.tau_max;
}

}  // namespace tts::icm
