// SPDX-License-Identifier: Apache-2.0
#pragma once

// Virtual environment runtime: twin generation from the engineering
// knowledge, simulation runs for the conveyor and the welding arm,
// replication of a recorded plant trace, and the tune-and-rerun loop.

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "tts/common/access.hpp"
#include "tts/common/canonical.hpp"
#include "tts/icm/knowledge.hpp"
#include "tts/plant/trace.hpp"
#include "tts/rules/rule.hpp"

namespace tts::twin {

struct Bounds {
  double min = 0.0;
  double max = 0.0;

  bool contains(double v) const { return min <= v && v <= max; }
  double clamp(double v) const { return v < min ? min : (v > max ? max : v); }
  bool operator==(const Bounds&) const = default;
};

/// Process-specific settings (epsilon) and model constants for one run.
struct TwinConfig {
  Bounds tau_v{1.0, 5.0};
  Bounds tau_o{0.0, 10.0};
  Bounds tau_c{5.0, 10.0};
  Bounds tau_p{2.0, 4.0};
  Bounds tau_t{20.0, 90.0};
  double d = 3.0;
  double k_heat = 0.5;
  double k_cool = 0.5;
  std::int64_t A_max_capacity = 5;
  double dt = 0.1;
  std::int64_t max_ticks = 500;

  static TwinConfig reference() { return {}; }

  /// Throws Error(ConfigInvalid).
  void validate() const;
  icm::ConfigMap settings() const;

  bool operator==(const TwinConfig&) const = default;
};

std::string to_json(const TwinConfig& config);
/// Overrides fields of `base` from a JSON object. Bounds are written as
/// [min, max] pairs. Unknown keys and bad values throw Error(ConfigInvalid).
TwinConfig twin_config_from_json(std::string_view json, const TwinConfig& base = TwinConfig{});

enum class Severity : std::uint8_t { Info, Warning, Critical };
enum class ServiceAction : std::uint8_t { None, SchedulingService, CalibrationService, Shutdown };
enum class Mode : std::uint8_t { Simulation, Replication };
enum class RunKind : std::uint8_t { Conveyor, Arm, Replicate };
enum class Outcome : std::uint8_t { Optimal, Incident, CapacityReached };

std::string_view to_string(Severity s) noexcept;
std::string_view to_string(ServiceAction a) noexcept;
std::string_view to_string(Mode m) noexcept;
std::string_view to_string(RunKind k) noexcept;
std::string_view to_string(Outcome o) noexcept;

inline constexpr std::string_view kNoMatchingRule = "no-matching-rule";

/// Either a ledger rule (id and version) or a TwinConfig bound ("config:tau_t",
/// version 0) in simulation runs, or kNoMatchingRule.
struct RuleRef {
  std::string rule_id;
  std::int64_t version = 0;

  bool operator==(const RuleRef&) const = default;
};

struct Incident {
  std::string incident_id;
  std::int64_t tick = 0;
  std::string kind;  // SetpointOutOfBounds, TemperatureBreach, ConsistencyFailure, ...
  RuleRef violated_rule;
  std::vector<std::string> actor_ids;
  std::map<std::string, double> observed;
  Severity severity = Severity::Info;
  ServiceAction action_taken = ServiceAction::None;
  std::string detail;

  /// Equality ignoring the run-scoped incident id.
  bool same_event(const Incident& other) const;
};

Bytes encode(const Incident& incident);
/// Throws Error(Malformed).
Incident decode_incident(ByteView body);
std::string to_json(const Incident& incident);

struct HealthEvent {
  std::int64_t tick = 0;
  std::int64_t o_count = 0;
  std::int64_t welds_since_check = 0;
};

/// One line of the run log:
///   t=<time> tick=<n> <KIND> key=value ...
struct TraceEvent {
  std::int64_t tick = 0;
  double time = 0.0;
  std::string kind;
  std::vector<std::pair<std::string, std::string>> fields;

  std::string line() const;
};

struct ConveyorInputs {
  double velocity = 0.0;
  std::vector<std::int64_t> loads;  // requested load ticks
  std::int64_t ticks = 0;           // 0 means config.max_ticks
};

struct ArmInputs {
  double current = 0.0;
  double pressure = 0.0;
  std::int64_t objects = 1;
};

struct ReplicateInputs {
  plant::Trace trace;
  std::vector<icm::CalibrationRecord> calibration;
};

using RunInputs = std::variant<ConveyorInputs, ArmInputs, ReplicateInputs>;

struct RunReport {
  std::string run_id;
  std::optional<std::string> parent_run_id;
  Mode mode = Mode::Simulation;
  RunKind kind = RunKind::Conveyor;
  TwinConfig config;
  RunInputs inputs;
  std::vector<TraceEvent> events;
  plant::Trace plant_trace;
  std::vector<Incident> incidents;
  std::vector<HealthEvent> health_events;
  std::int64_t o_count = 0;
  int task_status = 0;
  std::vector<std::string> rules_written;
  Outcome outcome = Outcome::Optimal;
  icm::ConfigMap pe_settings;

  std::string run_log() const;
  /// Canonical JSON (fixed key order, no whitespace variance).
  std::string to_json() const;
};

enum class EndpointKind : std::uint8_t { Device, Sensor };

struct Endpoint {
  std::string id;
  EndpointKind kind = EndpointKind::Device;
  std::string type;   // PLC, HMI, or the sensor type
  std::string owner;  // owning asset for sensors
};

struct BusMessage {
  std::string from;
  std::string to;
  std::string topic;
  std::string payload;
};

/// In-process stand-in for the plant network. Only links declared in the
/// topology carry traffic.
class MessageBus {
 public:
  void add_route(const std::string& from, const std::string& to);
  bool can_route(const std::string& from, const std::string& to) const;
  const std::set<std::pair<std::string, std::string>>& routes() const { return routes_; }

  /// Throws Error(NotFound) when no route exists.
  void send(BusMessage message);
  const std::vector<BusMessage>& delivered() const { return log_; }

 private:
  std::set<std::pair<std::string, std::string>> routes_;
  std::vector<BusMessage> log_;
};

struct TwinInstance {
  icm::EngineeringKnowledge ek;
  std::vector<icm::DomainKnowledge> dk;
  std::vector<Endpoint> endpoints;
  MessageBus bus;
  plant::PlantConfig plant_config;
  std::vector<std::string> bound_rule_ids;
  std::vector<icm::CalibrationRecord> calibration;
  std::vector<std::string> warnings;
  std::shared_ptr<rules::RuleRegistry> rules;
  Principal actor{"system", {Role::System}};
  std::function<void(const Incident&)> on_incident;
  std::shared_ptr<std::atomic<std::int64_t>> run_counter =
      std::make_shared<std::atomic<std::int64_t>>(0);

  const Endpoint* endpoint(std::string_view id) const;
  /// The plant model for a run under `config` (dt, d, k_heat, k_cool).
  plant::PlantConfig model_for(const TwinConfig& config) const;
};

/// Ledger-side specification snapshot: calibration records verbatim, the
/// engineering knowledge as a digest.
void publish_spec(ledger::Ledger& ledger, const Principal& author, const icm::EngineeringKnowledge& ek,
                  const std::vector<icm::CalibrationRecord>& calibration);
std::optional<std::vector<icm::CalibrationRecord>> latest_calibration(const ledger::Ledger& ledger);

/// Throws Error(InvalidSpec) when validate_spec reports findings and
/// Error(LedgerUnavailable) without a rule registry.
TwinInstance generate_twin(const icm::EngineeringKnowledge& ek,
                           const std::vector<icm::DomainKnowledge>& dk,
                           std::shared_ptr<rules::RuleRegistry> rules,
                           Principal actor = {"system", {Role::System}});

RunReport run_conveyor_sim(TwinInstance& twin, const TwinConfig& config, const ConveyorInputs& in);
RunReport run_arm_sim(TwinInstance& twin, const TwinConfig& config, const ArmInputs& in);

/// Throws Error(CalibrationGap) when a traced sensor has no record.
RunReport replicate(TwinInstance& twin, const plant::Trace& pe_trace,
                    const std::vector<icm::CalibrationRecord>& calibration,
                    const TwinConfig& config = TwinConfig::reference());

/// Throws Error(NotTunable) unless the previous run ended in an incident.
RunReport tune_and_rerun(TwinInstance& twin, const RunReport& previous, const TwinConfig& new_config);

/// Replication policy knobs.
inline constexpr int kShutdownCriticalCount = 3;
inline constexpr std::int64_t kShutdownWindowTicks = 10;

}  // namespace tts::twin
