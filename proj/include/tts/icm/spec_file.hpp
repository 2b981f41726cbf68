// SPDX-License-Identifier: Apache-2.0
#pragma once

// JSON specification files. Top-level keys: devices, sensors, topology,
// processes, calibration, domain_knowledge. Unknown keys are rejected at
// every level; docs/spec-format.md documents the schema.

#include <string>
#include <string_view>
#include <vector>

#include "tts/icm/knowledge.hpp"

namespace tts::icm {

struct SpecBundle {
  EngineeringKnowledge ek;
  std::vector<CalibrationRecord> calibration;
  std::vector<DomainKnowledge> domain_knowledge;
};

/// Throws Error(Malformed) describing the offending path.
SpecBundle parse_spec(std::string_view json_text);
std::string dump_spec(const SpecBundle& bundle);

SpecBundle reference_bundle();

}  // namespace tts::icm
