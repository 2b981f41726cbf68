// SPDX-License-Identifier: Apache-2.0
#include "tts/verify/verify.hpp"

#include <chrono>
#include <cmath>
#include <unordered_set>

#include "json.hpp"
#include "tts/common/canonical.hpp"
#include "tts/common/error.hpp"
#include "tts/common/text.hpp"

namespace tts::verify {

using ojson = nlohmann::ordered_json;
using plant::TaskStatus;

std::string_view to_string(PropertyId id) noexcept {
  switch (id) {
    case PropertyId::P1_Time: return "P1_Time";
    case PropertyId::P2_Temperature: return "P2_Temperature";
    case PropertyId::P3_Velocity: return "P3_Velocity";
  }
  return "unknown";
}

PropertyId property_from_string(std::string_view name) {
  for (auto id : {PropertyId::P1_Time, PropertyId::P2_Temperature, PropertyId::P3_Velocity}) {
    auto full = to_string(id);
    if (name == full || name == full.substr(0, 2)) return id;
  }
  throw Error(Errc::InvalidArgument, "unknown property '" + std::string(name) + "'");
}

std::string_view to_string(Result r) noexcept { return r == Result::Sat ? "sat" : "unsat"; }

PropertySpec PropertySpec::from_config(PropertyId id, const twin::TwinConfig& config) {
  switch (id) {
    case PropertyId::P1_Time: return time(config.d);
    case PropertyId::P2_Temperature: return temperature(config.tau_t);
    case PropertyId::P3_Velocity: return velocity(config.tau_v);
  }
  throw Error(Errc::InvalidArgument, "unknown property");
}

void PropertySpec::validate() const {
  if (id == PropertyId::P1_Time) {
    if (!(d > 0) || !std::isfinite(d)) throw Error(Errc::InvalidArgument, "P1 needs a positive d");
    return;
  }
  if (!std::isfinite(bounds.min) || !std::isfinite(bounds.max) || bounds.min > bounds.max) {
    throw Error(Errc::InvalidArgument, std::string(to_string(id)) + " needs finite min <= max");
  }
}

namespace {

/// What a property looks at in one step.
struct Observation {
  double time = 0.0;
  double dt = 0.0;
  bool motor_on = false;
  double velocity = 0.0;
  double temp = 0.0;
  TaskStatus status = TaskStatus::Idle;
  TaskStatus prev_status = TaskStatus::Idle;
  std::optional<double> prev_weld_started_at;
};

std::optional<std::string> violation(const PropertySpec& prop, const Observation& o) {
  switch (prop.id) {
    case PropertyId::P1_Time: {
      if (o.prev_status != TaskStatus::Welding || o.status != TaskStatus::Done) return std::nullopt;
      if (!o.prev_weld_started_at) return std::nullopt;
      double dur = o.time - *o.prev_weld_started_at;
      if (std::abs(dur - prop.d) <= o.dt + 1e-9) return std::nullopt;
      return "weld lasted " + format_number(dur) + " s, expected " + format_number(prop.d);
    }
    case PropertyId::P2_Temperature: {
      bool welding = o.status == TaskStatus::Welding || o.prev_status == TaskStatus::Welding;
      if (!welding || prop.bounds.contains(o.temp)) return std::nullopt;
      return "o_temp " + format_number(o.temp) + " outside [" + format_number(prop.bounds.min) + ", " +
             format_number(prop.bounds.max) + "] while welding";
    }
    case PropertyId::P3_Velocity: {
      if (!o.motor_on || prop.bounds.contains(o.velocity)) return std::nullopt;
      return "velocity " + format_number(o.velocity) + " outside [" + format_number(prop.bounds.min) +
             ", " + format_number(prop.bounds.max) + "] with the motor on";
    }
  }
  return std::nullopt;
}

}  // namespace

Verdict check_trace(const plant::Trace& trace, const PropertySpec& prop) {
  prop.validate();
  Verdict v;
  v.property = prop.id;
  v.bound_k = static_cast<std::int64_t>(trace.size());
  double dt = 0.0;
  for (const auto& r : trace) {
    if (r.tick > 0) {
      dt = r.time / static_cast<double>(r.tick);
      break;
    }
  }
  const plant::TraceRecord* prev = nullptr;
  for (const auto& rec : trace) {
    Observation o;
    o.time = rec.time;
    o.dt = dt;
    o.motor_on = rec.motor_on;
    o.status = rec.arm.task_status;
    if (prev != nullptr) {
      o.prev_status = prev->arm.task_status;
      o.prev_weld_started_at = prev->weld_started_at;
    }
    if (prop.id == PropertyId::P2_Temperature) {
      const auto* s = rec.first_of_type(plant::SensorType::Temperature);
      if (s == nullptr) {
        throw Error(Errc::MissingSignal, "tick " + std::to_string(rec.tick) + " has no temperature reading");
      }
      o.temp = s->value;
    } else if (prop.id == PropertyId::P3_Velocity) {
      const auto* s = rec.first_of_type(plant::SensorType::Velocity);
      if (s == nullptr) {
        throw Error(Errc::MissingSignal, "tick " + std::to_string(rec.tick) + " has no velocity reading");
      }
      o.velocity = s->value;
    }
    ++v.explored_states;
    if (auto why = violation(prop, o)) {
      v.result = Result::Sat;
      v.counterexample = Counterexample{rec.tick, *why, {}};
      return v;
    }
    prev = &rec;
  }
  return v;
}

plant::PlantConfig ExploreModel::plant_config() const {
  auto p = plant;
  p.dt = config.dt;
  p.weld_duration = config.d;
  p.k_heat = config.k_heat;
  p.k_cool = config.k_cool;
  return p;
}

std::vector<double> grid(const twin::Bounds& b, int points) {
  if (points < 1) throw Error(Errc::InvalidArgument, "grid needs at least one point");
  if (points == 1 || b.min == b.max) return {b.min};
  std::vector<double> out;
  for (int i = 0; i < points; ++i) {
    out.push_back(i == points - 1 ? b.max
                                  : b.min + (b.max - b.min) * static_cast<double>(i) /
                                                static_cast<double>(points - 1));
  }
  return out;
}

namespace {

struct Edge {
  std::int64_t parent = -1;  // index into edges, -1 at the root
  std::int64_t tick = 0;
  bool load = false;
  std::vector<plant::ActuatorCommand> commands;
};

struct Node {
  plant::PlantState state;
  std::optional<std::int64_t> last_load;
  std::int64_t edge = -1;
};

struct Choice {
  bool load = false;
  std::vector<plant::ActuatorCommand> commands;
};

std::string state_key(const plant::PlantState& s, std::optional<std::int64_t> since_load) {
  ByteWriter w;
  w.boolean(s.motor_on).f64(s.velocity).f64(s.velocity_setpoint);
  w.u32(static_cast<std::uint32_t>(s.belt_objects.size()));
  for (const auto& o : s.belt_objects) w.f64(o.position).boolean(o.welded);
  const auto& a = s.arm;
  w.boolean(a.enabled).f64(a.current).f64(a.pressure).f64(a.object_temp);
  w.u8(static_cast<std::uint8_t>(a.task_status));
  w.i64(a.weld_start_tick ? s.tick - *a.weld_start_tick : -1);
  w.i64(a.objects_welded);
  w.i64(since_load ? *since_load : -1);
  const auto& b = w.bytes();
  return {b.begin(), b.end()};
}

plant::Schedule schedule_of(const std::vector<Edge>& edges, std::int64_t leaf) {
  plant::Schedule s;
  for (auto e = leaf; e >= 0; e = edges[static_cast<std::size_t>(e)].parent) {
    const auto& edge = edges[static_cast<std::size_t>(e)];
    if (edge.load) s.loads.insert(edge.tick);
    if (!edge.commands.empty()) s.commands[edge.tick] = edge.commands;
  }
  return s;
}

}  // namespace

Verdict bounded_explore(const ExploreModel& model, std::int64_t k, const PropertySpec& prop,
                        const ExploreOptions& options) {
  if (k < 1) throw Error(Errc::InvalidArgument, "bound k must be at least 1");
  prop.validate();
  model.config.validate();
  const auto started = std::chrono::steady_clock::now();
  const auto pcfg = model.plant_config();
  plant::Plant plant(pcfg);
  const auto& cfg = model.config;
  const bool conveyor = prop.id == PropertyId::P3_Velocity;
  const std::int64_t delay_ticks =
      static_cast<std::int64_t>(std::ceil(cfg.d / cfg.dt - 1e-9));

  // Setpoints are chosen once, at tick 0, from the grid over the plant's
  // acceptance bounds. Every later tick offers act-then-wait.
  std::vector<std::vector<plant::ActuatorCommand>> setpoints;
  if (!options.inputs_enabled) {
    setpoints.push_back({});
  } else if (conveyor) {
    for (double v : grid(cfg.tau_v, options.grid_points)) {
      setpoints.push_back({{pcfg.motor_actuator, plant::CommandKind::SetVelocity, v},
                           {pcfg.motor_actuator, plant::CommandKind::MotorOn, 0}});
    }
  } else {
    for (double c : grid(cfg.tau_c, options.grid_points)) {
      for (double p : grid(cfg.tau_p, options.grid_points)) {
        setpoints.push_back({{pcfg.arm_actuator, plant::CommandKind::ArmOn, 0},
                             {pcfg.arm_actuator, plant::CommandKind::SetCurrent, c},
                             {pcfg.arm_actuator, plant::CommandKind::SetPressure, p}});
      }
    }
  }

  Verdict verdict;
  verdict.property = prop.id;
  verdict.bound_k = k;
  std::vector<Edge> edges;
  std::vector<Node> level{{plant.initial_state(), std::nullopt, -1}};
  verdict.explored_states = 1;

  for (std::int64_t t = 0; t < k && !level.empty(); ++t) {
    std::vector<Node> next;
    std::unordered_set<std::string> seen;
    for (const auto& node : level) {
      std::vector<Choice> choices;
      const auto& s = node.state;
      bool may_act = options.inputs_enabled;
      if (conveyor) {
        may_act = may_act && plant.slot_free(s) &&
                  (!node.last_load || t - *node.last_load >= delay_ticks);
      } else {
        may_act = may_act && s.arm.task_status != TaskStatus::Welding;
      }
      for (int act = may_act ? 1 : 0; act >= 0; --act) {
        Choice c;
        if (act == 1 && conveyor) c.load = true;
        if (act == 1 && !conveyor) {
          c.commands.push_back({pcfg.arm_actuator, plant::CommandKind::StartWeld, 0});
        }
        choices.push_back(std::move(c));
      }
      const auto& prefixes = t == 0 ? setpoints : std::vector<std::vector<plant::ActuatorCommand>>{{}};
      for (const auto& prefix : prefixes) {
        for (const auto& choice : choices) {
          Node child;
          child.last_load = node.last_load;
          plant::PlantState cur = s;
          if (choice.load) {
            cur = plant.load_object(cur);
            child.last_load = t;
          }
          std::vector<plant::ActuatorCommand> cmds = prefix;
          cmds.insert(cmds.end(), choice.commands.begin(), choice.commands.end());
          child.state = plant.step(cur, cmds);

          std::optional<std::int64_t> since;
          if (child.last_load) since = std::min(t + 1 - *child.last_load, delay_ticks);
          if (!seen.insert(state_key(child.state, since)).second) continue;
          if (++verdict.explored_states > options.max_states) {
            throw Error(Errc::BudgetExceeded, "explored more than " + std::to_string(options.max_states) +
                                                  " states at depth " + std::to_string(t + 1));
          }
          edges.push_back({node.edge, t, choice.load, std::move(cmds)});
          child.edge = static_cast<std::int64_t>(edges.size()) - 1;

          Observation o;
          o.time = child.state.time;
          o.dt = cfg.dt;
          o.motor_on = child.state.motor_on;
          o.velocity = child.state.velocity;
          o.temp = child.state.arm.object_temp;
          o.status = child.state.arm.task_status;
          o.prev_status = s.arm.task_status;
          o.prev_weld_started_at = s.weld_started_at(cfg.dt);
          if (auto why = violation(prop, o)) {
            verdict.result = Result::Sat;
            verdict.counterexample = Counterexample{child.state.tick, *why, schedule_of(edges, child.edge)};
            verdict.elapsed_ms = std::chrono::duration<double, std::milli>(
                                     std::chrono::steady_clock::now() - started)
                                     .count();
            return verdict;
          }
          next.push_back(std::move(child));
        }
      }
    }
    level = std::move(next);
  }
  verdict.elapsed_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return verdict;
}

plant::Trace replay(const ExploreModel& model, const plant::Schedule& schedule, std::int64_t ticks) {
  plant::Plant p(model.plant_config());
  return plant::simulate(p, p.initial_state(), schedule, {}, ticks).trace;
}

namespace {

ojson schedule_json(const plant::Schedule& s) {
  std::set<std::int64_t> ticks(s.loads.begin(), s.loads.end());
  for (const auto& [t, _] : s.commands) ticks.insert(t);
  ojson steps = ojson::array();
  for (auto t : ticks) {
    ojson cmds = ojson::array();
    if (auto it = s.commands.find(t); it != s.commands.end()) {
      for (const auto& c : it->second) {
        cmds.push_back({{"actuator", c.actuator},
                        {"kind", std::string(plant::to_string(c.kind))},
                        {"value", c.value}});
      }
    }
    steps.push_back({{"tick", t}, {"load", s.loads.contains(t)}, {"commands", std::move(cmds)}});
  }
  return {{"steps", std::move(steps)}};
}

}  // namespace

std::string schedule_to_json(const plant::Schedule& schedule) { return schedule_json(schedule).dump(2) + "\n"; }

plant::Schedule schedule_from_json(std::string_view json) {
  plant::Schedule s;
  try {
    auto j = ojson::parse(json);
    for (const auto& step : j.at("steps")) {
      auto t = step.at("tick").get<std::int64_t>();
      if (step.at("load").get<bool>()) s.loads.insert(t);
      for (const auto& c : step.at("commands")) {
        s.commands[t].push_back({c.at("actuator").get<std::string>(),
                                 plant::command_kind_from_string(c.at("kind").get<std::string>()),
                                 c.at("value").get<double>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::Malformed, std::string("schedule: ") + e.what());
  }
  return s;
}

std::string to_json(const Verdict& v, bool include_timing) {
  ojson j;
  j["property"] = std::string(to_string(v.property));
  j["result"] = std::string(to_string(v.result));
  j["bound_k"] = v.bound_k;
  j["explored_states"] = v.explored_states;
  if (v.counterexample) {
    j["counterexample"] = {{"violation_tick", v.counterexample->violation_tick},
                           {"detail", v.counterexample->detail},
                           {"schedule", schedule_json(v.counterexample->schedule)}};
  } else {
    j["counterexample"] = nullptr;
  }
  if (include_timing) j["elapsed_ms"] = v.elapsed_ms;
  return j.dump(2) + "\n";
}

}  // namespace tts::verify
