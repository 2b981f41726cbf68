// SPDX-License-Identifier: Apache-2.0
#include "tts/plant/plant.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "tts/common/error.hpp"

namespace tts::plant {

std::string_view to_string(SensorType t) noexcept {
  switch (t) {
    case SensorType::Velocity: return "Velocity";
    case SensorType::ObjectDetection: return "ObjectDetection";
    case SensorType::Current: return "Current";
    case SensorType::Pressure: return "Pressure";
    case SensorType::Temperature: return "Temperature";
  }
  return "Unknown";
}

SensorType sensor_type_from_string(std::string_view name) {
  for (auto t : {SensorType::Velocity, SensorType::ObjectDetection, SensorType::Current,
                 SensorType::Pressure, SensorType::Temperature}) {
    if (to_string(t) == name) return t;
  }
  throw Error(Errc::Malformed, "unknown sensor type '" + std::string(name) + "'");
}

std::string_view to_string(TaskStatus s) noexcept {
  switch (s) {
    case TaskStatus::Idle: return "idle";
    case TaskStatus::Done: return "done";
    case TaskStatus::Welding: return "welding";
  }
  return "unknown";
}

std::string_view to_string(CommandKind k) noexcept {
  switch (k) {
    case CommandKind::MotorOn: return "MotorOn";
    case CommandKind::MotorOff: return "MotorOff";
    case CommandKind::SetVelocity: return "SetVelocity";
    case CommandKind::ArmOn: return "ArmOn";
    case CommandKind::ArmOff: return "ArmOff";
    case CommandKind::SetCurrent: return "SetCurrent";
    case CommandKind::SetPressure: return "SetPressure";
    case CommandKind::StartWeld: return "StartWeld";
    case CommandKind::AbortWeld: return "AbortWeld";
  }
  return "Unknown";
}

CommandKind command_kind_from_string(std::string_view name) {
  for (auto k : {CommandKind::MotorOn, CommandKind::MotorOff, CommandKind::SetVelocity,
                 CommandKind::ArmOn, CommandKind::ArmOff, CommandKind::SetCurrent,
                 CommandKind::SetPressure, CommandKind::StartWeld, CommandKind::AbortWeld}) {
    if (to_string(k) == name) return k;
  }
  throw Error(Errc::Malformed, "unknown command '" + std::string(name) + "'");
}

std::string_view to_string(FaultKind k) noexcept {
  switch (k) {
    case FaultKind::SensorOffset: return "SensorOffset";
    case FaultKind::SensorStuck: return "SensorStuck";
    case FaultKind::ActuatorOverride: return "ActuatorOverride";
    case FaultKind::RuleTamperAttempt: return "RuleTamperAttempt";
  }
  return "Unknown";
}

FaultKind fault_kind_from_string(std::string_view name) {
  for (auto k : {FaultKind::SensorOffset, FaultKind::SensorStuck, FaultKind::ActuatorOverride,
                 FaultKind::RuleTamperAttempt}) {
    if (to_string(k) == name) return k;
  }
  throw Error(Errc::Malformed, "unknown fault kind '" + std::string(name) + "'");
}

void FaultInjection::validate() const {
  if (end_tick < start_tick) throw Error(Errc::InvalidArgument, "fault window is empty");
  if (!std::isfinite(magnitude)) throw Error(Errc::InvalidArgument, "fault magnitude not finite");
  if (target.empty()) throw Error(Errc::InvalidArgument, "fault target missing");
}

PlantConfig PlantConfig::reference() {
  PlantConfig c;
  c.sensors = {
      {"sensor1", SensorType::Velocity, "PLC1"},
      {"sensor2", SensorType::ObjectDetection, "PLC1"},
      {"sensor3", SensorType::Current, "PLC2"},
      {"sensor4", SensorType::Pressure, "PLC2"},
      {"sensor5", SensorType::Temperature, "PLC2"},
  };
  return c;
}

void PlantConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::ConfigInvalid, what); };
  for (double v : {belt_length, object_length, detect_min, detect_max, station_b_position,
                   init_temp, k_heat, k_cool, weld_duration, dt, noise_sigma}) {
    if (!std::isfinite(v)) fail("plant parameter not finite");
  }
  if (dt <= 0) fail("dt must be positive");
  if (belt_length <= 0 || object_length <= 0) fail("belt and object length must be positive");
  if (object_length > belt_length) fail("object longer than belt");
  if (detect_min < 0 || detect_max < detect_min || detect_max > belt_length) {
    fail("detection window outside belt");
  }
  if (station_b_position < 0 || station_b_position > belt_length) fail("Station B off the belt");
  if (k_heat < 0 || k_cool < 0 || noise_sigma < 0) fail("model constants must be non-negative");
  if (weld_duration <= 0) fail("weld duration must be positive");
  if (motor_actuator == arm_actuator) fail("actuator ids must differ");
  std::set<std::string> ids;
  for (const auto& s : sensors) {
    if (!ids.insert(s.sensor_id).second) fail("duplicate sensor id " + s.sensor_id);
  }
}

std::int64_t PlantConfig::weld_ticks() const {
  return std::max<std::int64_t>(1, std::llround(weld_duration / dt));
}

const SensorRegistration* PlantConfig::find_sensor(std::string_view sensor_id) const {
  for (const auto& s : sensors) {
    if (s.sensor_id == sensor_id) return &s;
  }
  return nullptr;
}

std::optional<double> PlantState::weld_started_at(double dt) const {
  if (!arm.weld_start_tick) return std::nullopt;
  return static_cast<double>(*arm.weld_start_tick) * dt;
}

Plant::Plant(PlantConfig config) : config_(std::move(config)) { config_.validate(); }

PlantState Plant::initial_state(std::uint64_t seed) const {
  PlantState s;
  s.rng_seed = seed;
  s.arm.object_temp = config_.init_temp;
  for (const auto& reg : config_.sensors) s.latched[reg.sensor_id] = truthful_value(s, reg);
  return s;
}

namespace {

void apply_command(const PlantConfig& cfg, PlantState& s, const ActuatorCommand& cmd) {
  if (!std::isfinite(cmd.value)) {
    throw Error(Errc::NonFiniteCommand, std::string(to_string(cmd.kind)) + " on " + cmd.actuator);
  }
  bool motor_cmd = cmd.kind == CommandKind::MotorOn || cmd.kind == CommandKind::MotorOff ||
                   cmd.kind == CommandKind::SetVelocity;
  if (cmd.actuator != cfg.motor_actuator && cmd.actuator != cfg.arm_actuator) {
    throw Error(Errc::UnknownActuator, "'" + cmd.actuator + "'");
  }
  if (motor_cmd != (cmd.actuator == cfg.motor_actuator)) {
    throw Error(Errc::InvalidArgument,
                std::string(to_string(cmd.kind)) + " is not supported by " + cmd.actuator);
  }
  switch (cmd.kind) {
    case CommandKind::MotorOn: s.motor_on = true; break;
    case CommandKind::MotorOff: s.motor_on = false; break;
    case CommandKind::SetVelocity:
      if (cmd.value < 0) throw Error(Errc::InvalidArgument, "negative velocity setpoint");
      s.velocity_setpoint = cmd.value;
      break;
    case CommandKind::ArmOn: s.arm.enabled = true; break;
    case CommandKind::ArmOff:
      s.arm.enabled = false;
      if (s.arm.task_status == TaskStatus::Welding) {
        s.arm.task_status = TaskStatus::Idle;
        s.arm.weld_start_tick.reset();
        s.arm.weld_object_id.reset();
      }
      break;
    case CommandKind::SetCurrent:
      if (cmd.value < 0) throw Error(Errc::InvalidArgument, "negative current setpoint");
      s.arm.current = cmd.value;
      break;
    case CommandKind::SetPressure:
      if (cmd.value < 0) throw Error(Errc::InvalidArgument, "negative pressure setpoint");
      s.arm.pressure = cmd.value;
      break;
    case CommandKind::StartWeld:
      if (s.arm.task_status == TaskStatus::Welding) break;
      s.arm.task_status = TaskStatus::Welding;
      s.arm.weld_start_tick = s.tick;
      s.arm.object_temp = cfg.init_temp;  // a fresh chassis enters the cell
      s.arm.weld_object_id.reset();
      for (const auto& obj : s.belt_objects) {
        if (!obj.welded && std::abs(obj.position - cfg.station_b_position) <= cfg.object_length) {
          s.arm.weld_object_id = obj.object_id;
          break;
        }
      }
      break;
    case CommandKind::AbortWeld:
      if (s.arm.task_status == TaskStatus::Welding) {
        s.arm.task_status = TaskStatus::Idle;
        s.arm.weld_start_tick.reset();
        s.arm.weld_object_id.reset();
      }
      break;
  }
}

}  // namespace

PlantState Plant::step(const PlantState& state, std::span<const ActuatorCommand> commands,
                       std::span<const FaultInjection> faults, double dt) const {
  if (!(dt > 0) || !std::isfinite(dt)) throw Error(Errc::InvalidArgument, "dt must be positive");
  PlantState next = state;
  for (const auto& cmd : commands) apply_command(config_, next, cmd);

  const std::int64_t new_tick = state.tick + 1;
  for (const auto& f : faults) {
    if (f.kind != FaultKind::ActuatorOverride || !f.active_at(new_tick)) continue;
    if (f.target == config_.motor_actuator) {
      next.motor_on = true;
      next.velocity_setpoint = std::max(0.0, f.magnitude);
    } else if (f.target == config_.arm_actuator) {
      next.arm.current = std::max(0.0, f.magnitude);
    } else {
      throw Error(Errc::UnknownActuator, "override target '" + f.target + "'");
    }
  }

  next.velocity = next.motor_on ? next.velocity_setpoint : 0.0;

  // Conveyor kinematics; chassis past the belt end leave the line.
  for (auto& obj : next.belt_objects) obj.position += next.velocity * dt;
  std::erase_if(next.belt_objects,
                [&](const ObjectOnBelt& o) { return o.position > config_.belt_length; });

  // Arm thermal model: linear heating while welding, exponential cooling
  // toward ambient otherwise.
  auto& arm = next.arm;
  if (arm.task_status == TaskStatus::Welding) {
    arm.object_temp += config_.k_heat * arm.current * arm.pressure * dt;
    if (new_tick - *arm.weld_start_tick >= config_.weld_ticks()) {
      arm.task_status = TaskStatus::Done;
      arm.weld_start_tick.reset();
      ++arm.objects_welded;
      if (arm.weld_object_id) {
        for (auto& obj : next.belt_objects) {
          if (obj.object_id == *arm.weld_object_id) obj.welded = true;
        }
        arm.weld_object_id.reset();
      }
    }
  } else {
    arm.object_temp =
        config_.init_temp + (arm.object_temp - config_.init_temp) * std::exp(-config_.k_cool * dt);
  }

  next.tick = new_tick;
  next.time = static_cast<double>(new_tick) * dt;

  for (const auto& reg : config_.sensors) {
    bool stuck = std::any_of(faults.begin(), faults.end(), [&](const FaultInjection& f) {
      return f.kind == FaultKind::SensorStuck && f.target == reg.sensor_id && f.active_at(new_tick);
    });
    if (!stuck) next.latched[reg.sensor_id] = truthful_value(next, reg);
  }
  return next;
}

double Plant::truthful_value(const PlantState& s, const SensorRegistration& reg) const {
  switch (reg.type) {
    case SensorType::Velocity: return s.velocity;
    case SensorType::ObjectDetection: {
      bool seen = std::any_of(s.belt_objects.begin(), s.belt_objects.end(), [&](const auto& o) {
        return !o.welded && o.position >= config_.detect_min && o.position <= config_.detect_max;
      });
      return seen ? 1.0 : 0.0;
    }
    case SensorType::Current: return s.arm.current;
    case SensorType::Pressure: return s.arm.pressure;
    case SensorType::Temperature: return s.arm.object_temp;
  }
  return 0.0;
}

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

// Gaussian noise as a pure function of (seed, tick, sensor) via Box-Muller,
// so repeated reads of one state agree and runs are reproducible.
double Plant::noise(const PlantState& s, std::size_t sensor_index) const {
  if (config_.noise_sigma == 0.0) return 0.0;
  std::uint64_t a = splitmix64(s.rng_seed ^ splitmix64(static_cast<std::uint64_t>(s.tick)) ^
                               splitmix64(sensor_index + 0x51ed));
  std::uint64_t b = splitmix64(a);
  double u1 = (static_cast<double>(a >> 11) + 1.0) / 9007199254740993.0;
  double u2 = static_cast<double>(b >> 11) / 9007199254740992.0;
  return config_.noise_sigma * std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

SensorReading Plant::read_sensor(const PlantState& state, std::string_view sensor_id,
                                 std::span<const FaultInjection> faults) const {
  const SensorRegistration* reg = nullptr;
  std::size_t index = 0;
  for (; index < config_.sensors.size(); ++index) {
    if (config_.sensors[index].sensor_id == sensor_id) {
      reg = &config_.sensors[index];
      break;
    }
  }
  if (reg == nullptr) throw Error(Errc::UnknownSensor, "'" + std::string(sensor_id) + "'");

  SensorReading r{reg->sensor_id, reg->type, 0.0, state.time, reg->asset_id};
  bool stuck = false;
  double offset = 0.0;
  for (const auto& f : faults) {
    if (f.target != reg->sensor_id || !f.active_at(state.tick)) continue;
    if (f.kind == FaultKind::SensorStuck) stuck = true;
    if (f.kind == FaultKind::SensorOffset) offset += f.magnitude;
  }
  if (stuck) {
    auto it = state.latched.find(reg->sensor_id);
    r.value = it != state.latched.end() ? it->second : truthful_value(state, *reg);
    return r;
  }
  r.value = truthful_value(state, *reg);
  if (reg->type != SensorType::ObjectDetection) r.value += noise(state, index);
  r.value += offset;
  return r;
}

std::vector<SensorReading> Plant::read_all(const PlantState& state,
                                           std::span<const FaultInjection> faults) const {
  std::vector<SensorReading> out;
  out.reserve(config_.sensors.size());
  for (const auto& reg : config_.sensors) out.push_back(read_sensor(state, reg.sensor_id, faults));
  return out;
}

bool Plant::slot_free(const PlantState& state) const {
  return std::none_of(state.belt_objects.begin(), state.belt_objects.end(),
                      [&](const ObjectOnBelt& o) { return o.position < config_.object_length; });
}

PlantState Plant::load_object(const PlantState& state) const {
  if (!slot_free(state)) {
    throw Error(Errc::SlotOccupied, "Station A slot occupied at tick " + std::to_string(state.tick));
  }
  PlantState next = state;
  ObjectOnBelt obj{next.next_object_id++, 0.0, state.time, false};
  next.belt_objects.insert(next.belt_objects.begin(), obj);
  return next;
}

bool Plant::asset_on(const PlantState& state, std::string_view asset_id) const {
  if (asset_id == config_.conveyor_asset) return state.motor_on;
  if (asset_id == config_.arm_asset) return state.arm.enabled;
  throw Error(Errc::UnknownReference, "asset '" + std::string(asset_id) + "'");
}

}  // namespace tts::plant
