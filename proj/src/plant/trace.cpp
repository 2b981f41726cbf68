// SPDX-License-Identifier: Apache-2.0
#include "tts/plant/trace.hpp"

#include <cmath>

#include "json.hpp"
#include "tts/common/error.hpp"

namespace tts::plant {

using ojson = nlohmann::ordered_json;

const SensorReading* TraceRecord::reading(std::string_view sensor_id) const {
  for (const auto& r : readings) {
    if (r.sensor_id == sensor_id) return &r;
  }
  return nullptr;
}

const SensorReading* TraceRecord::first_of_type(SensorType type) const {
  for (const auto& r : readings) {
    if (r.sensor_type == type) return &r;
  }
  return nullptr;
}

TraceRecord make_record(const Plant& plant, const PlantState& state,
                        std::span<const FaultInjection> faults) {
  TraceRecord rec;
  rec.tick = state.tick;
  rec.time = state.time;
  rec.motor_on = state.motor_on;
  rec.velocity = state.velocity;
  rec.objects = state.belt_objects;
  rec.arm = state.arm;
  rec.arm.weld_object_id.reset();
  rec.weld_started_at = state.weld_started_at(plant.config().dt);
  rec.assets[plant.config().conveyor_asset] = state.motor_on;
  rec.assets[plant.config().arm_asset] = state.arm.enabled;
  rec.readings = plant.read_all(state, faults);
  return rec;
}

namespace {

ojson record_json(const TraceRecord& r) {
  ojson j;
  j["tick"] = r.tick;
  j["time"] = r.time;
  j["motor_on"] = r.motor_on;
  j["velocity"] = r.velocity;
  ojson objects = ojson::array();
  for (const auto& o : r.objects) {
    objects.push_back(ojson{{"id", o.object_id}, {"position", o.position},
                            {"loaded_at", o.loaded_at}, {"welded", o.welded}});
  }
  j["objects"] = std::move(objects);
  ojson arm;
  arm["enabled"] = r.arm.enabled;
  arm["current"] = r.arm.current;
  arm["pressure"] = r.arm.pressure;
  arm["object_temp"] = r.arm.object_temp;
  arm["task_status"] = static_cast<int>(r.arm.task_status);
  arm["weld_started_at"] = r.weld_started_at ? ojson(*r.weld_started_at) : ojson(nullptr);
  arm["objects_welded"] = r.arm.objects_welded;
  j["arm"] = std::move(arm);
  ojson assets = ojson::object();
  for (const auto& [id, on] : r.assets) assets[id] = on;
  j["assets"] = std::move(assets);
  ojson readings = ojson::array();
  for (const auto& s : r.readings) {
    readings.push_back(ojson{{"sensor_id", s.sensor_id},
                             {"type", std::string(to_string(s.sensor_type))},
                             {"asset_id", s.asset_id},
                             {"value", s.value}});
  }
  j["readings"] = std::move(readings);
  return j;
}

void expect_keys(const ojson& j, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw Error(Errc::TraceParse, "expected an object");
  for (auto* k : keys) {
    if (!j.contains(k)) throw Error(Errc::TraceParse, std::string("missing field '") + k + "'");
  }
  if (j.size() != keys.size()) throw Error(Errc::TraceParse, "unexpected extra fields");
}

double number(const ojson& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number()) throw Error(Errc::TraceParse, std::string("field '") + key + "' not numeric");
  double d = v.get<double>();
  if (!std::isfinite(d)) throw Error(Errc::TraceParse, std::string("field '") + key + "' not finite");
  return d;
}

std::int64_t integer(const ojson& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_integer()) {
    throw Error(Errc::TraceParse, std::string("field '") + key + "' not an integer");
  }
  return v.get<std::int64_t>();
}

bool boolean(const ojson& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_boolean()) throw Error(Errc::TraceParse, std::string("field '") + key + "' not boolean");
  return v.get<bool>();
}

std::string text(const ojson& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_string()) throw Error(Errc::TraceParse, std::string("field '") + key + "' not a string");
  return v.get<std::string>();
}

TraceRecord record_from_json(const ojson& j) {
  expect_keys(j, {"tick", "time", "motor_on", "velocity", "objects", "arm", "assets", "readings"});
  TraceRecord r;
  r.tick = integer(j, "tick");
  r.time = number(j, "time");
  r.motor_on = boolean(j, "motor_on");
  r.velocity = number(j, "velocity");
  if (!j["objects"].is_array()) throw Error(Errc::TraceParse, "objects must be an array");
  for (const auto& o : j["objects"]) {
    expect_keys(o, {"id", "position", "loaded_at", "welded"});
    r.objects.push_back({integer(o, "id"), number(o, "position"), number(o, "loaded_at"),
                         boolean(o, "welded")});
  }
  const auto& arm = j["arm"];
  expect_keys(arm, {"enabled", "current", "pressure", "object_temp", "task_status",
                    "weld_started_at", "objects_welded"});
  r.arm.enabled = boolean(arm, "enabled");
  r.arm.current = number(arm, "current");
  r.arm.pressure = number(arm, "pressure");
  r.arm.object_temp = number(arm, "object_temp");
  auto status = integer(arm, "task_status");
  if (status < 0 || status > 2) throw Error(Errc::TraceParse, "task_status out of range");
  r.arm.task_status = static_cast<TaskStatus>(status);
  if (!arm["weld_started_at"].is_null()) r.weld_started_at = number(arm, "weld_started_at");
  r.arm.objects_welded = integer(arm, "objects_welded");
  if (r.weld_started_at && r.time > 0) {
    double dt = r.time / static_cast<double>(r.tick);
    r.arm.weld_start_tick = std::llround(*r.weld_started_at / dt);
  }
  const auto& assets = j["assets"];
  if (!assets.is_object()) throw Error(Errc::TraceParse, "assets must be an object");
  for (const auto& [id, on] : assets.items()) {
    if (!on.is_boolean()) throw Error(Errc::TraceParse, "asset status must be boolean");
    r.assets[id] = on.get<bool>();
  }
  if (!j["readings"].is_array()) throw Error(Errc::TraceParse, "readings must be an array");
  for (const auto& s : j["readings"]) {
    expect_keys(s, {"sensor_id", "type", "asset_id", "value"});
    SensorReading reading;
    reading.sensor_id = text(s, "sensor_id");
    try {
      reading.sensor_type = sensor_type_from_string(text(s, "type"));
    } catch (const Error& e) {
      throw Error(Errc::TraceParse, e.what());
    }
    reading.asset_id = text(s, "asset_id");
    reading.value = number(s, "value");
    reading.timestamp = r.time;
    r.readings.push_back(std::move(reading));
  }
  return r;
}

}  // namespace

std::string to_line(const TraceRecord& record) { return record_json(record).dump(); }

std::string export_trace(std::span<const TraceRecord> trace) {
  std::string out;
  for (const auto& r : trace) {
    out += to_line(r);
    out += '\n';
  }
  return out;
}

Trace parse_trace(std::string_view text) {
  Trace trace;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = ojson::parse(line);
      auto rec = record_from_json(j);
      if (!trace.empty() && rec.tick <= trace.back().tick) {
        throw Error(Errc::TraceParse, "ticks must increase");
      }
      trace.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::TraceParse, "line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(Errc::TraceParse, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return trace;
}

SimulationResult simulate(const Plant& plant, const PlantState& initial, const Schedule& schedule,
                          std::span<const FaultInjection> faults, std::int64_t ticks) {
  for (const auto& f : faults) f.validate();
  SimulationResult result;
  result.trace.reserve(static_cast<std::size_t>(std::max<std::int64_t>(ticks, 0)));
  PlantState state = initial;
  static const std::vector<ActuatorCommand> kNone;
  for (std::int64_t i = 0; i < ticks; ++i) {
    if (schedule.loads.contains(state.tick)) {
      if (plant.slot_free(state)) {
        state = plant.load_object(state);
      } else {
        result.rejected_loads.push_back(state.tick);
      }
    }
    auto it = schedule.commands.find(state.tick);
    const auto& cmds = it != schedule.commands.end() ? it->second : kNone;
    state = plant.step(state, cmds, faults);
    result.trace.push_back(make_record(plant, state, faults));
  }
  result.final_state = std::move(state);
  return result;
}

Schedule reference_schedule(const PlantConfig& config, double velocity, double current,
                            double pressure, std::int64_t load_every, std::int64_t ticks) {
  Schedule s;
  auto& start = s.commands[0];
  start.push_back({config.motor_actuator, CommandKind::SetVelocity, velocity});
  start.push_back({config.motor_actuator, CommandKind::MotorOn, 0});
  start.push_back({config.arm_actuator, CommandKind::ArmOn, 0});
  start.push_back({config.arm_actuator, CommandKind::SetCurrent, current});
  start.push_back({config.arm_actuator, CommandKind::SetPressure, pressure});
  if (load_every <= 0 || velocity <= 0) return s;
  auto travel = static_cast<std::int64_t>(
      std::ceil(config.station_b_position / (velocity * config.dt) - 1e-9));
  for (std::int64_t t = 0; t < ticks; t += load_every) {
    s.loads.insert(t);
    auto weld_at = t + travel;
    if (weld_at < ticks) {
      s.commands[weld_at].push_back({config.arm_actuator, CommandKind::StartWeld, 0});
    }
  }
  return s;
}

}  // namespace tts::plant
