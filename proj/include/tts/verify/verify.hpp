// SPDX-License-Identifier: Apache-2.0
#pragma once

// Property checking for the conveyor and the welding arm:
//   P1 Time         every completed weld lasts d (within one dt)
//   P2 Temperature  o_temp stays inside tau_t while welding
//   P3 Velocity     the belt speed stays inside tau_v while the motor runs
// check_trace() judges one recorded trace. bounded_explore() enumerates every
// input path of length <= k over a discretized grid through the plant stepper.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tts/plant/trace.hpp"
#include "tts/twin/twin.hpp"

namespace tts::verify {

enum class PropertyId : std::uint8_t { P1_Time, P2_Temperature, P3_Velocity };

std::string_view to_string(PropertyId id) noexcept;
/// Accepts "P1", "P2", "P3" and the full names. Throws Error(InvalidArgument).
PropertyId property_from_string(std::string_view name);

struct PropertySpec {
  PropertyId id = PropertyId::P1_Time;
  double d = 0.0;       // P1
  twin::Bounds bounds;  // P2: tau_t, P3: tau_v

  static PropertySpec time(double d) { return {PropertyId::P1_Time, d, {}}; }
  static PropertySpec temperature(twin::Bounds tau_t) { return {PropertyId::P2_Temperature, 0.0, tau_t}; }
  static PropertySpec velocity(twin::Bounds tau_v) { return {PropertyId::P3_Velocity, 0.0, tau_v}; }
  /// The property with its parameters taken from `config`.
  static PropertySpec from_config(PropertyId id, const twin::TwinConfig& config);

  /// Throws Error(InvalidArgument).
  void validate() const;
};

enum class Result : std::uint8_t { Unsat, Sat };
std::string_view to_string(Result r) noexcept;

struct Counterexample {
  std::int64_t violation_tick = 0;
  std::string detail;
  /// Inputs that drive the plant from its initial state into the violation;
  /// empty for counterexamples taken from a recorded trace.
  plant::Schedule schedule;
};

struct Verdict {
  PropertyId property = PropertyId::P1_Time;
  Result result = Result::Unsat;
  std::optional<Counterexample> counterexample;
  std::uint64_t explored_states = 0;
  std::int64_t bound_k = 0;
  double elapsed_ms = 0.0;

  bool sat() const { return result == Result::Sat; }
};

/// Timing is left out unless asked for so that reports stay reproducible.
std::string to_json(const Verdict& verdict, bool include_timing = false);
/// Replayable input schedule: {"steps": [{"tick", "load", "commands": [...]}]}.
std::string schedule_to_json(const plant::Schedule& schedule);
plant::Schedule schedule_from_json(std::string_view json);

/// Throws Error(MissingSignal) when a record lacks the sensor the property reads.
Verdict check_trace(const plant::Trace& trace, const PropertySpec& prop);

/// Plant-side settings: the acceptance bounds the controller enforces and
/// the physical constants. The property under test carries its own bounds.
struct ExploreModel {
  twin::TwinConfig config;
  plant::PlantConfig plant = plant::PlantConfig::reference();

  plant::PlantConfig plant_config() const;
};

struct ExploreOptions {
  int grid_points = 5;
  std::uint64_t max_states = 2'000'000;
  /// False leaves every actuator untouched (motor off, C = P = 0).
  bool inputs_enabled = true;
};

/// `points` evenly spaced values from min to max inclusive.
std::vector<double> grid(const twin::Bounds& b, int points);

/// Breadth-first over input paths with duplicate states merged, so the first
/// violation found is the shortest one and, among those, the
/// lexicographically first input sequence. Throws Error(BudgetExceeded) when
/// the visited-state count passes options.max_states and
/// Error(InvalidArgument) for k < 1.
Verdict bounded_explore(const ExploreModel& model, std::int64_t k, const PropertySpec& prop,
                        const ExploreOptions& options = {});

/// Runs a counterexample schedule through the plant stepper.
plant::Trace replay(const ExploreModel& model, const plant::Schedule& schedule, std::int64_t ticks);

}  // namespace tts::verify
