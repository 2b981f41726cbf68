// SPDX-License-Identifier: Apache-2.0
#pragma once

// Integrity-checking inputs: engineering knowledge (devices, sensors,
// topology, processes), calibration bounds and domain knowledge.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tts/common/canonical.hpp"
#include "tts/common/digest.hpp"
#include "tts/plant/plant.hpp"

namespace tts::icm {

/// Configuration settings (chi): a flat key -> scalar map. std::map keeps
/// the keys in canonical (byte-wise) order.
using ConfigValue = std::variant<bool, std::int64_t, double, std::string>;
using ConfigMap = std::map<std::string, ConfigValue>;

void encode(ByteWriter& w, const ConfigMap& config);
ConfigMap decode_config(ByteReader& r);
std::string to_text(const ConfigValue& v);

struct DeviceSpec {
  std::string asset_id;
  std::string name;
  std::string type;  // PLC, HMI, ...
  std::string make;
  std::string model;
  std::vector<std::string> standards;
  ConfigMap config;
};

struct SensorSpec {
  std::string sensor_id;
  plant::SensorType sensor_type = plant::SensorType::Velocity;
  std::string asset_id;
  std::string units;
};

struct Link {
  std::string from;
  std::string to;
};

struct ProcessSpec {
  std::string process_id;
  std::vector<std::string> steps;  // asset ids in order
  std::vector<std::string> constraints;
};

struct EngineeringKnowledge {
  std::vector<DeviceSpec> devices;
  std::vector<SensorSpec> sensors;
  std::vector<Link> topology;
  std::vector<ProcessSpec> processes;

  const DeviceSpec* find_device(std::string_view asset_id) const;
  const SensorSpec* find_sensor(std::string_view sensor_id) const;
  bool has_id(std::string_view id) const { return find_device(id) || find_sensor(id); }

  Bytes canonical() const;
  Digest digest() const { return hash(canonical()); }
};

struct CalibrationRecord {
  std::string sensor_id;
  double tau_min = 0.0;
  double tau_max = 0.0;
  double calibrated_at = 0.0;
  std::string standard_ref;

  bool operator==(const CalibrationRecord&) const = default;
};

void encode(ByteWriter& w, const CalibrationRecord& c);
CalibrationRecord decode_calibration(ByteReader& r);

enum class KnowledgeSource : std::uint8_t { Engineer, SupplyChain, Soc };
std::string_view to_string(KnowledgeSource s) noexcept;
KnowledgeSource knowledge_source_from_string(std::string_view name);

struct HistoryEntry {
  double timestamp = 0.0;
  ConfigMap status;  // historical asset status snapshot
  ConfigMap config;  // chi in force at the time
  std::string note;
};

struct DomainKnowledge {
  std::string asset_id;
  std::vector<HistoryEntry> history;
  KnowledgeSource source = KnowledgeSource::Engineer;

  Bytes canonical_history() const;
};

struct Finding {
  std::string code;  // DUP_ID, DANGLING_LINK, ORPHAN_SENSOR, DISCONNECTED, ...
  std::string subject;
  std::string message;

  bool operator==(const Finding&) const = default;
};

struct ValidationReport {
  std::vector<Finding> findings;

  bool ok() const { return findings.empty(); }
  std::size_t count(std::string_view code) const;
};

/// Lists every violated engineering-knowledge invariant; empty iff the
/// specification is well formed.
ValidationReport validate_spec(const EngineeringKnowledge& ek);

/// Bounds must be finite with tau_min <= tau_max, one record per known sensor.
ValidationReport validate_calibration(const EngineeringKnowledge& ek,
                                      const std::vector<CalibrationRecord>& records);

/// History timestamps non-decreasing and the asset declared.
ValidationReport validate_domain_knowledge(const EngineeringKnowledge& ek,
                                           const std::vector<DomainKnowledge>& dk);

/// Throws Error(CalibrationGap) if no record covers `sensor_id`.
const CalibrationRecord& calibration_for(const std::vector<CalibrationRecord>& records,
                                         std::string_view sensor_id);

/// The reference assembly line: PLC1/HMI1 drive the conveyor, PLC2/HMI2 the
/// welding arm, sensors 1-5 as registered in PlantConfig::reference().
EngineeringKnowledge reference_engineering_knowledge();
std::vector<CalibrationRecord> reference_calibration();
std::vector<DomainKnowledge> reference_domain_knowledge();

/// Plant registry derived from the EK sensor list; geometry keys present in
/// the conveyor controller's chi (belt_length, object_length,
/// station_b_position, init_temp) override the defaults.
plant::PlantConfig plant_config_from(const EngineeringKnowledge& ek);

}  // namespace tts::icm
