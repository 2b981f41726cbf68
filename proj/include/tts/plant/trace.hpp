// SPDX-License-Identifier: Apache-2.0
#pragma once

// Per-tick trace records and their newline-delimited export. Each line is a
// compact JSON object whose keys appear in a fixed order:
//   tick, time, motor_on, velocity, objects[{id, position, loaded_at, welded}],
//   arm{enabled, current, pressure, object_temp, task_status,
//       weld_started_at, objects_welded},
//   assets{<asset_id>: bool}, readings[{sensor_id, type, asset_id, value}]
// The export is the canonical serialization of a run: equal traces produce
// byte-identical files.

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tts/plant/plant.hpp"

namespace tts::plant {

struct TraceRecord {
  std::int64_t tick = 0;
  double time = 0.0;
  bool motor_on = false;
  double velocity = 0.0;
  std::vector<ObjectOnBelt> objects;
  ArmState arm;
  std::optional<double> weld_started_at;
  std::map<std::string, bool> assets;
  std::vector<SensorReading> readings;

  const SensorReading* reading(std::string_view sensor_id) const;
  const SensorReading* first_of_type(SensorType type) const;

  bool operator==(const TraceRecord&) const = default;
};

using Trace = std::vector<TraceRecord>;

TraceRecord make_record(const Plant& plant, const PlantState& state,
                        std::span<const FaultInjection> faults = {});

std::string to_line(const TraceRecord& record);
std::string export_trace(std::span<const TraceRecord> trace);

/// Throws Error(TraceParse) with the offending line number.
Trace parse_trace(std::string_view text);

/// Scripted drive of the plant: commands keyed by the tick they are issued
/// at, and ticks at which a chassis is loaded before stepping.
struct Schedule {
  std::map<std::int64_t, std::vector<ActuatorCommand>> commands;
  std::set<std::int64_t> loads;
};

struct SimulationResult {
  Trace trace;  // one record per step, ticks 1..n
  std::vector<std::int64_t> rejected_loads;
  PlantState final_state;
};

SimulationResult simulate(const Plant& plant, const PlantState& initial, const Schedule& schedule,
                          std::span<const FaultInjection> faults, std::int64_t ticks);

/// The reference production schedule: motor and arm powered at tick 0,
/// chassis loaded every `load_every` ticks and each welded as it reaches
/// Station B.
Schedule reference_schedule(const PlantConfig& config, double velocity, double current,
                            double pressure, std::int64_t load_every, std::int64_t ticks);

}  // namespace tts::plant
