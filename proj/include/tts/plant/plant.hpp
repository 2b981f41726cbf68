// SPDX-License-Identifier: Apache-2.0
#pragma once

// Discrete-time model of the physical environment: a motor-driven conveyor
// carrying chassis from Station A (loading, proximity detection) to Station B
// where a robotic arm spot-welds them, plus fault injection.
//
// Plant states are values. step() and load_object() return new states and
// never mutate their inputs, so a state can be handed to other threads freely.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tts::plant {

enum class SensorType : std::uint8_t {
  Velocity,
  ObjectDetection,
  Current,
  Pressure,
  Temperature,
};

std::string_view to_string(SensorType t) noexcept;
SensorType sensor_type_from_string(std::string_view name);

struct SensorRegistration {
  std::string sensor_id;
  SensorType type;
  std::string asset_id;
};

/// Geometry, thermal constants and the actuator/sensor registry. Defaults
/// describe the reference assembly line.
struct PlantConfig {
  double belt_length = 20.0;
  double object_length = 1.0;
  double detect_min = 0.0;
  double detect_max = 0.5;
  double station_b_position = 10.0;
  double init_temp = 25.0;
  double k_heat = 0.5;  // degrees per (A * N * s)
  double k_cool = 0.5;  // 1/s
  double weld_duration = 3.0;
  double dt = 0.1;
  double cooling_epsilon = 1e-9;
  double noise_sigma = 0.0;

  std::string motor_actuator = "conveyor_motor";
  std::string arm_actuator = "welding_arm";
  std::string conveyor_asset = "PLC1";
  std::string arm_asset = "PLC2";
  std::vector<SensorRegistration> sensors;

  static PlantConfig reference();

  /// Throws Error(ConfigInvalid) on non-positive dt, inconsistent geometry,
  /// duplicate sensor ids and the like.
  void validate() const;

  /// Weld duration expressed in whole ticks (at least one).
  std::int64_t weld_ticks() const;

  const SensorRegistration* find_sensor(std::string_view sensor_id) const;
};

struct ObjectOnBelt {
  std::int64_t object_id = 0;
  double position = 0.0;
  double loaded_at = 0.0;
  bool welded = false;

  bool operator==(const ObjectOnBelt&) const = default;
};

enum class TaskStatus : std::uint8_t {
  Idle = 0,
  Done = 1,
  Welding = 2,
};

std::string_view to_string(TaskStatus s) noexcept;

struct ArmState {
  bool enabled = false;
  double current = 0.0;
  double pressure = 0.0;
  double object_temp = 0.0;
  TaskStatus task_status = TaskStatus::Idle;
  std::optional<std::int64_t> weld_start_tick;
  std::optional<std::int64_t> weld_object_id;  // chassis at Station B, if any
  std::int64_t objects_welded = 0;

  bool operator==(const ArmState&) const = default;
};

struct PlantState {
  std::int64_t tick = 0;
  double time = 0.0;
  bool motor_on = false;
  double velocity = 0.0;
  double velocity_setpoint = 0.0;
  std::vector<ObjectOnBelt> belt_objects;  // ascending position
  ArmState arm;
  std::uint64_t rng_seed = 0;
  std::int64_t next_object_id = 1;
  // Last sensor value observed outside any SensorStuck window.
  std::map<std::string, double> latched;

  std::optional<double> weld_started_at(double dt) const;

  bool operator==(const PlantState&) const = default;
};

struct SensorReading {
  std::string sensor_id;
  SensorType sensor_type = SensorType::Velocity;
  double value = 0.0;
  double timestamp = 0.0;
  std::string asset_id;

  bool operator==(const SensorReading&) const = default;
};

enum class CommandKind : std::uint8_t {
  MotorOn,
  MotorOff,
  SetVelocity,
  ArmOn,
  ArmOff,
  SetCurrent,
  SetPressure,
  StartWeld,
  AbortWeld,
};

std::string_view to_string(CommandKind k) noexcept;
CommandKind command_kind_from_string(std::string_view name);

struct ActuatorCommand {
  std::string actuator;
  CommandKind kind = CommandKind::MotorOn;
  double value = 0.0;

  bool operator==(const ActuatorCommand&) const = default;
};

enum class FaultKind : std::uint8_t {
  SensorOffset,
  SensorStuck,
  ActuatorOverride,
  RuleTamperAttempt,
};

std::string_view to_string(FaultKind k) noexcept;
FaultKind fault_kind_from_string(std::string_view name);

/// A fault active on the inclusive tick window [start_tick, end_tick].
struct FaultInjection {
  FaultKind kind = FaultKind::SensorOffset;
  std::string target;
  double magnitude = 0.0;
  std::int64_t start_tick = 0;
  std::int64_t end_tick = 0;

  bool active_at(std::int64_t tick) const { return tick >= start_tick && tick <= end_tick; }
  void validate() const;

  bool operator==(const FaultInjection&) const = default;
};

class Plant {
 public:
  explicit Plant(PlantConfig config);

  const PlantConfig& config() const { return config_; }

  /// Motor off, arm unpowered at init_temp, empty belt.
  PlantState initial_state(std::uint64_t seed = 0) const;

  /// Advances one tick of length dt. Commands are applied first, then the
  /// physics runs; faults whose window contains the new tick shape the
  /// returned state.
  PlantState step(const PlantState& state, std::span<const ActuatorCommand> commands,
                  std::span<const FaultInjection> faults, double dt) const;
  PlantState step(const PlantState& state, std::span<const ActuatorCommand> commands,
                  std::span<const FaultInjection> faults = {}) const {
    return step(state, commands, faults, config_.dt);
  }

  /// Sensor-visible value at the state's tick.
  SensorReading read_sensor(const PlantState& state, std::string_view sensor_id,
                            std::span<const FaultInjection> faults = {}) const;

  /// Every registered sensor, in registration order.
  std::vector<SensorReading> read_all(const PlantState& state,
                                      std::span<const FaultInjection> faults = {}) const;

  /// Places a new chassis at position 0. Throws Error(SlotOccupied) when
  /// another chassis lies within one object length of Station A.
  PlantState load_object(const PlantState& state) const;

  bool slot_free(const PlantState& state) const;
  bool asset_on(const PlantState& state, std::string_view asset_id) const;

 private:
  double truthful_value(const PlantState& state, const SensorRegistration& reg) const;
  double noise(const PlantState& state, std::size_t sensor_index) const;

  PlantConfig config_;
};

}  // namespace tts::plant
