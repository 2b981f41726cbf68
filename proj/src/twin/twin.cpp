// SPDX-License-Identifier: Apache-2.0
#include "tts/twin/twin.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "json.hpp"
#include "tts/common/error.hpp"
#include "tts/common/text.hpp"
#include "tts/icm/consistency.hpp"
#include "tts/icm/provenance.hpp"

namespace tts::twin {

using ojson = nlohmann::ordered_json;

namespace {

constexpr double kEps = 1e-9;
constexpr std::size_t kHistoryLimit = 64;
constexpr std::string_view kCalibrationSubject = "spec/calibration";
constexpr std::string_view kEkSubject = "spec/ek";

}  // namespace

// ---------------------------------------------------------------------------
// Enumerations and config

std::string_view to_string(Severity s) noexcept {
  switch (s) {
    case Severity::Info: return "info";
    case Severity::Warning: return "warning";
    case Severity::Critical: return "critical";
  }
  return "unknown";
}

std::string_view to_string(ServiceAction a) noexcept {
  switch (a) {
    case ServiceAction::None: return "none";
    case ServiceAction::SchedulingService: return "scheduling_service";
    case ServiceAction::CalibrationService: return "calibration_service";
    case ServiceAction::Shutdown: return "shutdown";
  }
  return "unknown";
}

std::string_view to_string(Mode m) noexcept {
  return m == Mode::Simulation ? "simulation" : "replication";
}

std::string_view to_string(RunKind k) noexcept {
  switch (k) {
    case RunKind::Conveyor: return "conveyor";
    case RunKind::Arm: return "arm";
    case RunKind::Replicate: return "replicate";
  }
  return "unknown";
}

std::string_view to_string(Outcome o) noexcept {
  switch (o) {
    case Outcome::Optimal: return "optimal";
    case Outcome::Incident: return "incident";
    case Outcome::CapacityReached: return "capacity_reached";
  }
  return "unknown";
}

void TwinConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::ConfigInvalid, what); };
  const std::pair<const char*, const Bounds*> bounds[] = {
      {"tau_v", &tau_v}, {"tau_o", &tau_o}, {"tau_c", &tau_c}, {"tau_p", &tau_p}, {"tau_t", &tau_t}};
  for (const auto& [name, b] : bounds) {
    if (!std::isfinite(b->min) || !std::isfinite(b->max)) fail(std::string(name) + " not finite");
    if (b->min > b->max) fail(std::string(name) + " has min > max");
  }
  for (double v : {d, k_heat, k_cool, dt}) {
    if (!std::isfinite(v)) fail("model constant not finite");
  }
  if (d <= 0) fail("d must be positive");
  if (dt <= 0) fail("dt must be positive");
  if (k_heat < 0 || k_cool < 0) fail("k_heat and k_cool must be non-negative");
  if (A_max_capacity < 1) fail("A_max_capacity must be at least 1");
  if (max_ticks < 1) fail("max_ticks must be at least 1");
}

icm::ConfigMap TwinConfig::settings() const {
  icm::ConfigMap m;
  const std::pair<const char*, const Bounds*> bounds[] = {
      {"tau_v", &tau_v}, {"tau_o", &tau_o}, {"tau_c", &tau_c}, {"tau_p", &tau_p}, {"tau_t", &tau_t}};
  for (const auto& [name, b] : bounds) {
    m[std::string(name) + "_min"] = b->min;
    m[std::string(name) + "_max"] = b->max;
  }
  m["d"] = d;
  m["k_heat"] = k_heat;
  m["k_cool"] = k_cool;
  m["A_max_capacity"] = A_max_capacity;
  m["dt"] = dt;
  m["max_ticks"] = max_ticks;
  return m;
}

namespace {

ojson config_json(const TwinConfig& c) {
  ojson j;
  j["tau_v"] = {c.tau_v.min, c.tau_v.max};
  j["tau_o"] = {c.tau_o.min, c.tau_o.max};
  j["tau_c"] = {c.tau_c.min, c.tau_c.max};
  j["tau_p"] = {c.tau_p.min, c.tau_p.max};
  j["tau_t"] = {c.tau_t.min, c.tau_t.max};
  j["d"] = c.d;
  j["k_heat"] = c.k_heat;
  j["k_cool"] = c.k_cool;
  j["A_max_capacity"] = c.A_max_capacity;
  j["dt"] = c.dt;
  j["max_ticks"] = c.max_ticks;
  return j;
}

}  // namespace

std::string to_json(const TwinConfig& config) { return config_json(config).dump(); }

TwinConfig twin_config_from_json(std::string_view json, const TwinConfig& base) {
  ojson j;
  try {
    j = ojson::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigInvalid, std::string("config is not JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(Errc::ConfigInvalid, "config must be a JSON object");
  TwinConfig c = base;
  auto number = [](const ojson& v, const std::string& key) {
    if (!v.is_number()) throw Error(Errc::ConfigInvalid, "'" + key + "' must be a number");
    return v.get<double>();
  };
  auto integer = [](const ojson& v, const std::string& key) {
    if (!v.is_number_integer()) throw Error(Errc::ConfigInvalid, "'" + key + "' must be an integer");
    return v.get<std::int64_t>();
  };
  for (const auto& [key, v] : j.items()) {
    Bounds* b = key == "tau_v"   ? &c.tau_v
                : key == "tau_o" ? &c.tau_o
                : key == "tau_c" ? &c.tau_c
                : key == "tau_p" ? &c.tau_p
                : key == "tau_t" ? &c.tau_t
                                 : nullptr;
    if (b != nullptr) {
      if (!v.is_array() || v.size() != 2) {
        throw Error(Errc::ConfigInvalid, "'" + key + "' must be a [min, max] pair");
      }
      *b = {number(v[0], key), number(v[1], key)};
    } else if (key == "d") {
      c.d = number(v, key);
    } else if (key == "k_heat") {
      c.k_heat = number(v, key);
    } else if (key == "k_cool") {
      c.k_cool = number(v, key);
    } else if (key == "dt") {
      c.dt = number(v, key);
    } else if (key == "A_max_capacity") {
      c.A_max_capacity = integer(v, key);
    } else if (key == "max_ticks") {
      c.max_ticks = integer(v, key);
    } else {
      throw Error(Errc::ConfigInvalid, "unknown config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Incidents

bool Incident::same_event(const Incident& o) const {
  return tick == o.tick && kind == o.kind && violated_rule == o.violated_rule &&
         actor_ids == o.actor_ids && observed == o.observed && severity == o.severity &&
         action_taken == o.action_taken && detail == o.detail;
}

Bytes encode(const Incident& inc) {
  ByteWriter w;
  w.str(inc.incident_id).i64(inc.tick).str(inc.kind);
  w.str(inc.violated_rule.rule_id).i64(inc.violated_rule.version);
  w.u32(static_cast<std::uint32_t>(inc.actor_ids.size()));
  for (const auto& a : inc.actor_ids) w.str(a);
  w.u32(static_cast<std::uint32_t>(inc.observed.size()));
  for (const auto& [k, v] : inc.observed) w.str(k).f64(v);
  w.u8(static_cast<std::uint8_t>(inc.severity)).u8(static_cast<std::uint8_t>(inc.action_taken));
  w.str(inc.detail);
  return std::move(w).bytes();
}

Incident decode_incident(ByteView body) {
  ByteReader r(body);
  Incident inc;
  inc.incident_id = r.str();
  inc.tick = r.i64();
  inc.kind = r.str();
  inc.violated_rule.rule_id = r.str();
  inc.violated_rule.version = r.i64();
  auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) inc.actor_ids.push_back(r.str());
  n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    auto k = r.str();
    inc.observed[k] = r.f64();
  }
  auto sev = r.u8();
  auto act = r.u8();
  if (sev > 2 || act > 3) throw Error(Errc::Malformed, "incident enum out of range");
  inc.severity = static_cast<Severity>(sev);
  inc.action_taken = static_cast<ServiceAction>(act);
  inc.detail = r.str();
  r.finish();
  return inc;
}

namespace {

ojson incident_json(const Incident& inc) {
  ojson j;
  j["incident_id"] = inc.incident_id;
  j["tick"] = inc.tick;
  j["kind"] = inc.kind;
  j["violated_rule"] = {{"rule_id", inc.violated_rule.rule_id},
                        {"version", inc.violated_rule.version}};
  j["actor_ids"] = inc.actor_ids;
  ojson observed = ojson::object();
  for (const auto& [k, v] : inc.observed) observed[k] = v;
  j["observed"] = std::move(observed);
  j["severity"] = std::string(to_string(inc.severity));
  j["action_taken"] = std::string(to_string(inc.action_taken));
  j["detail"] = inc.detail;
  return j;
}

}  // namespace

std::string to_json(const Incident& incident) { return incident_json(incident).dump(); }

// ---------------------------------------------------------------------------
// Run log and report

namespace {

std::string quote_if_needed(const std::string& v) {
  bool plain = !v.empty() && std::none_of(v.begin(), v.end(), [](char c) {
    return c == ' ' || c == '"' || c == '=' || c == '\\' || c == '\n' || c == '\t';
  });
  if (plain) return v;
  std::string out = "\"";
  for (char c : v) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string TraceEvent::line() const {
  std::string s = "t=" + format_number(time) + " tick=" + std::to_string(tick) + " " + kind;
  for (const auto& [k, v] : fields) s += " " + k + "=" + quote_if_needed(v);
  return s;
}

std::string RunReport::run_log() const {
  std::string out;
  for (const auto& e : events) out += e.line() + "\n";
  return out;
}

namespace {

ojson inputs_json(const RunInputs& inputs) {
  return std::visit(
      [](const auto& in) -> ojson {
        using T = std::decay_t<decltype(in)>;
        if constexpr (std::is_same_v<T, ConveyorInputs>) {
          return {{"velocity", in.velocity}, {"loads", in.loads}, {"ticks", in.ticks}};
        } else if constexpr (std::is_same_v<T, ArmInputs>) {
          return {{"current", in.current}, {"pressure", in.pressure}, {"objects", in.objects}};
        } else {
          ojson cal = ojson::array();
          for (const auto& c : in.calibration) {
            cal.push_back({{"sensor_id", c.sensor_id}, {"tau_min", c.tau_min}, {"tau_max", c.tau_max}});
          }
          return {{"trace_records", in.trace.size()},
                  {"trace_digest", to_hex(hash(plant::export_trace(in.trace)))},
                  {"calibration", std::move(cal)}};
        }
      },
      inputs);
}

ojson settings_json(const icm::ConfigMap& m) {
  ojson j = ojson::object();
  for (const auto& [k, v] : m) {
    std::visit([&](const auto& x) { j[k] = x; }, v);
  }
  return j;
}

}  // namespace

std::string RunReport::to_json() const {
  ojson j;
  j["run_id"] = run_id;
  j["parent_run_id"] = parent_run_id ? ojson(*parent_run_id) : ojson(nullptr);
  j["mode"] = std::string(twin::to_string(mode));
  j["kind"] = std::string(twin::to_string(kind));
  j["config"] = config_json(config);
  j["inputs"] = inputs_json(inputs);
  j["outcome"] = std::string(twin::to_string(outcome));
  j["o_count"] = o_count;
  j["task_status"] = task_status;
  ojson incs = ojson::array();
  for (const auto& i : incidents) incs.push_back(incident_json(i));
  j["incidents"] = std::move(incs);
  ojson health = ojson::array();
  for (const auto& h : health_events) {
    health.push_back({{"tick", h.tick}, {"o_count", h.o_count}, {"welds_since_check", h.welds_since_check}});
  }
  j["health_events"] = std::move(health);
  j["rules_written"] = rules_written;
  j["pe_settings"] = settings_json(pe_settings);
  j["plant_trace_records"] = plant_trace.size();
  j["plant_trace_digest"] = to_hex(hash(plant::export_trace(plant_trace)));
  ojson ev = ojson::array();
  for (const auto& e : events) ev.push_back(e.line());
  j["events"] = std::move(ev);
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Twin generation

void MessageBus::add_route(const std::string& from, const std::string& to) {
  routes_.emplace(from, to);
}

bool MessageBus::can_route(const std::string& from, const std::string& to) const {
  return routes_.contains({from, to});
}

void MessageBus::send(BusMessage message) {
  if (!can_route(message.from, message.to)) {
    throw Error(Errc::NotFound, "no route " + message.from + " -> " + message.to);
  }
  log_.push_back(std::move(message));
}

const Endpoint* TwinInstance::endpoint(std::string_view id) const {
  for (const auto& e : endpoints) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

plant::PlantConfig TwinInstance::model_for(const TwinConfig& config) const {
  auto m = plant_config;
  m.dt = config.dt;
  m.weld_duration = config.d;
  m.k_heat = config.k_heat;
  m.k_cool = config.k_cool;
  return m;
}

void publish_spec(ledger::Ledger& ledger, const Principal& author,
                  const icm::EngineeringKnowledge& ek,
                  const std::vector<icm::CalibrationRecord>& calibration) {
  require(author, Action::WriteSpec);
  auto findings = icm::validate_calibration(ek, calibration);
  if (!findings.ok()) {
    const auto& f = findings.findings.front();
    throw Error(Errc::InvalidSpec, f.code + " " + f.subject + ": " + f.message);
  }
  std::vector<std::string> sensors;
  for (const auto& c : calibration) sensors.push_back(c.sensor_id);
  ByteWriter cal;
  cal.u32(static_cast<std::uint32_t>(calibration.size()));
  for (const auto& c : calibration) icm::encode(cal, c);
  std::vector<std::string> ids;
  for (const auto& d : ek.devices) ids.push_back(d.asset_id);
  auto ek_bytes = ek.canonical();
  ledger.append({ledger.make_entry(ledger::EntryKind::SpecEntry,
                                   {std::string(kEkSubject), ids}, ek_bytes),
                 ledger.make_entry(ledger::EntryKind::SpecEntry,
                                   {std::string(kCalibrationSubject), sensors}, cal.bytes())},
                author);
}

std::optional<std::vector<icm::CalibrationRecord>> latest_calibration(const ledger::Ledger& ledger) {
  ledger::QueryFilter f;
  f.kind = ledger::EntryKind::SpecEntry;
  f.subject = std::string(kCalibrationSubject);
  auto hits = ledger.query(f);
  if (hits.empty()) return std::nullopt;
  auto body = hits.back().entry.body();
  ByteReader r(body);
  std::vector<icm::CalibrationRecord> out;
  auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(icm::decode_calibration(r));
  r.finish();
  return out;
}

TwinInstance generate_twin(const icm::EngineeringKnowledge& ek,
                           const std::vector<icm::DomainKnowledge>& dk,
                           std::shared_ptr<rules::RuleRegistry> rules, Principal actor) {
  if (!rules) throw Error(Errc::LedgerUnavailable, "twin generation needs a rule registry");
  auto report = icm::validate_spec(ek);
  auto dk_report = icm::validate_domain_knowledge(ek, dk);
  report.findings.insert(report.findings.end(), dk_report.findings.begin(), dk_report.findings.end());
  if (!report.ok()) {
    std::string msg;
    for (const auto& f : report.findings) {
      if (!msg.empty()) msg += "; ";
      msg += f.code + " " + f.subject;
    }
    throw Error(Errc::InvalidSpec, msg);
  }
  if (rules->engineering_knowledge().digest() != ek.digest()) {
    throw Error(Errc::InvalidSpec, "rule registry is bound to a different specification");
  }

  TwinInstance twin;
  twin.ek = ek;
  twin.dk = dk;
  twin.actor = std::move(actor);
  for (const auto& d : ek.devices) {
    twin.endpoints.push_back({d.asset_id, EndpointKind::Device, d.type, ""});
  }
  for (const auto& s : ek.sensors) {
    twin.endpoints.push_back(
        {s.sensor_id, EndpointKind::Sensor, std::string(plant::to_string(s.sensor_type)), s.asset_id});
  }
  for (const auto& l : ek.topology) twin.bus.add_route(l.from, l.to);
  twin.plant_config = icm::plant_config_from(ek);
  twin.plant_config.validate();
  for (const auto& r : rules->active()) twin.bound_rule_ids.push_back(r.rule_id);
  if (auto cal = latest_calibration(rules->ledger())) twin.calibration = std::move(*cal);
  if (rules->ledger().block_count() == 0) {
    twin.warnings.push_back("ledger is empty: no rules or calibration bound");
  } else {
    if (twin.bound_rule_ids.empty()) twin.warnings.push_back("no active rules on the ledger");
    if (twin.calibration.empty()) twin.warnings.push_back("no calibration snapshot on the ledger");
  }
  twin.rules = std::move(rules);
  return twin;
}

// ---------------------------------------------------------------------------
// Runs

namespace {

std::string sensor_of_type(const plant::PlantConfig& cfg, plant::SensorType type) {
  for (const auto& s : cfg.sensors) {
    if (s.type == type) return s.sensor_id;
  }
  throw Error(Errc::UnknownSensor, "no " + std::string(plant::to_string(type)) + " sensor declared");
}

class Run {
 public:
  Run(TwinInstance& twin, const TwinConfig& config, Mode mode, RunKind kind, RunInputs inputs)
      : twin_(twin) {
    if (!twin_.rules) throw Error(Errc::LedgerUnavailable, "twin has no rule registry");
    config.validate();
    r_.run_id = "RUN-" + std::to_string(++*twin_.run_counter);
    r_.mode = mode;
    r_.kind = kind;
    r_.config = config;
    r_.inputs = std::move(inputs);
  }

  RunReport& report() { return r_; }
  const TwinConfig& config() const { return r_.config; }

  void event(std::int64_t tick, std::string kind,
             std::vector<std::pair<std::string, std::string>> fields = {}) {
    r_.events.push_back({tick, static_cast<double>(tick) * r_.config.dt, std::move(kind),
                         std::move(fields)});
  }

  /// Appends the incident (plus optional provenance) to the ledger before
  /// it becomes visible in the report or the stream.
  const Incident& incident(Incident inc, std::vector<icm::ProvenanceRecord> provenance = {}) {
    inc.incident_id = r_.run_id + "/INC-" + std::to_string(r_.incidents.size() + 1);
    auto& ledger = twin_.rules->ledger();
    std::vector<ledger::Entry> entries;
    entries.push_back(ledger.make_entry(ledger::EntryKind::IncidentEntry,
                                        {inc.incident_id, inc.actor_ids}, encode(inc)));
    for (const auto& p : provenance) {
      std::vector<std::string> assets{p.asset_id()};
      entries.push_back(
          ledger.make_entry(ledger::EntryKind::ProvenanceEntry, {p.subject(), assets}, icm::encode(p)));
    }
    ledger.append(std::move(entries), twin_.actor);
    std::vector<std::pair<std::string, std::string>> f{
        {"id", inc.incident_id},
        {"kind", inc.kind},
        {"rule", inc.violated_rule.rule_id},
        {"version", std::to_string(inc.violated_rule.version)},
        {"severity", std::string(to_string(inc.severity))},
        {"action", std::string(to_string(inc.action_taken))}};
    event(inc.tick, "INCIDENT", std::move(f));
    r_.incidents.push_back(std::move(inc));
    if (twin_.on_incident) twin_.on_incident(r_.incidents.back());
    return r_.incidents.back();
  }

  std::string write_rule(rules::PredicatePtr pred, std::set<std::string> assoc,
                         const std::optional<std::string>& existing, std::int64_t tick) {
    auto id = twin_.rules->upsert_rule(twin_.actor, pred, std::move(assoc), existing);
    auto rule = twin_.rules->get(id);
    event(tick, "RULE_WRITTEN",
          {{"rule", id}, {"version", std::to_string(rule->version)}, {"text", rules::to_text(pred)}});
    if (std::find(r_.rules_written.begin(), r_.rules_written.end(), id) == r_.rules_written.end()) {
      r_.rules_written.push_back(id);
    }
    return id;
  }

  /// Process provenance linking a generated rule to the settings it came from.
  void rule_provenance(const std::string& rule_id, const std::string& asset_id,
                       const std::string& sensor_id) {
    auto rule = twin_.rules->get(rule_id);
    auto& ledger = twin_.rules->ledger();
    auto rec = icm::build_process_provenance(twin_.ek, twin_.actor, rule_id,
                                             rules::to_text(rule->description), rule->author,
                                             asset_id, sensor_id, r_.pe_settings,
                                             rule->updated_at);
    std::vector<std::string> assets{asset_id};
    ledger.append({ledger.make_entry(ledger::EntryKind::ProvenanceEntry, {rec.subject(), assets},
                                     icm::encode(rec))},
                  twin_.actor);
  }

  void decide() {
    if (!r_.incidents.empty()) {
      r_.outcome = Outcome::Incident;
    } else if (!r_.health_events.empty()) {
      r_.outcome = Outcome::CapacityReached;
    } else {
      r_.outcome = Outcome::Optimal;
    }
  }

  void end(std::int64_t tick) {
    event(tick, "RUN_END",
          {{"outcome", std::string(to_string(r_.outcome))},
           {"incidents", std::to_string(r_.incidents.size())},
           {"o_count", std::to_string(r_.o_count)}});
  }

  TwinInstance& twin() { return twin_; }

 private:
  TwinInstance& twin_;
  RunReport r_;
};

Incident bound_incident(std::int64_t tick, std::string kind, const char* bound_name,
                        std::vector<std::string> actors, std::map<std::string, double> observed,
                        Severity severity, std::string detail) {
  Incident inc;
  inc.tick = tick;
  inc.kind = std::move(kind);
  inc.violated_rule = {std::string("config:") + bound_name, 0};
  inc.actor_ids = std::move(actors);
  inc.observed = std::move(observed);
  inc.severity = severity;
  inc.action_taken = ServiceAction::None;
  inc.detail = std::move(detail);
  return inc;
}

std::optional<std::string> count_rule_for(const rules::RuleRegistry& reg, const std::string& id,
                                          const std::string& counter) {
  for (const auto& rule : reg.find_by_association(id)) {
    const auto* c = std::get_if<rules::CountAtMost>(&rule.description->node);
    if (c && c->counter == counter) return rule.rule_id;
  }
  return std::nullopt;
}

std::optional<std::string> threshold_id(const rules::RuleRegistry& reg, const std::string& sensor) {
  if (auto r = reg.threshold_rule_for(sensor)) return r->rule_id;
  return std::nullopt;
}

int task_status_of(const plant::TraceRecord& rec) {
  return rec.arm.task_status == plant::TaskStatus::Done ? 1 : 0;
}

}  // namespace

RunReport run_conveyor_sim(TwinInstance& twin, const TwinConfig& config, const ConveyorInputs& in) {
  if (!std::isfinite(in.velocity)) throw Error(Errc::InvalidArgument, "velocity setpoint not finite");
  if (in.ticks < 0) throw Error(Errc::InvalidArgument, "negative tick count");
  Run run(twin, config, Mode::Simulation, RunKind::Conveyor, in);
  auto& rep = run.report();
  const auto model = twin.model_for(config);
  plant::Plant plant(model);
  const auto velocity_sensor = sensor_of_type(model, plant::SensorType::Velocity);
  const auto detect_sensor = sensor_of_type(model, plant::SensorType::ObjectDetection);
  const std::int64_t ticks = in.ticks > 0 ? in.ticks : config.max_ticks;

  run.event(0, "RUN_START", {{"run", rep.run_id}, {"mode", "simulation"}, {"kind", "conveyor"}});

  // Motor starts off; V is accepted only inside tau_v.
  std::vector<plant::ActuatorCommand> start;
  if (config.tau_v.contains(in.velocity)) {
    start.push_back({model.motor_actuator, plant::CommandKind::SetVelocity, in.velocity});
    start.push_back({model.motor_actuator, plant::CommandKind::MotorOn, 0});
    run.event(0, "SETPOINT_ACCEPTED", {{"name", "velocity"}, {"value", format_number(in.velocity)}});
  } else {
    run.event(0, "SETPOINT_REJECTED", {{"name", "velocity"}, {"value", format_number(in.velocity)}});
    run.incident(bound_incident(
        0, "SetpointOutOfBounds", "tau_v", {model.conveyor_asset, velocity_sensor},
        {{"V", in.velocity}, {"tau_v_min", config.tau_v.min}, {"tau_v_max", config.tau_v.max}},
        Severity::Warning, "velocity setpoint rejected; motor stays at its prior velocity"));
  }

  std::vector<std::int64_t> requests = in.loads;
  std::sort(requests.begin(), requests.end());
  std::size_t next_request = 0;
  std::int64_t pending = 0;
  bool deferred_logged = false;
  std::optional<std::int64_t> last_load;
  bool prev_detect = false;
  bool count_incident = false;

  plant::PlantState state = plant.initial_state();
  for (std::int64_t t = 0; t < ticks; ++t) {
    while (next_request < requests.size() && requests[next_request] <= t) {
      ++pending;
      ++next_request;
    }
    if (pending > 0) {
      // Keep the inter-load delay d.
      bool delay_ok =
          !last_load || static_cast<double>(t - *last_load) * config.dt >= config.d - kEps;
      bool slot_ok = plant.slot_free(state);
      if (delay_ok && slot_ok) {
        state = plant.load_object(state);
        last_load = t;
        --pending;
        deferred_logged = false;
        run.event(t, "LOAD", {{"object", std::to_string(state.next_object_id - 1)}});
      } else if (!deferred_logged) {
        run.event(t, "LOAD_DEFERRED", {{"reason", delay_ok ? "slot" : "delay"}});
        deferred_logged = true;
      }
    }
    // Detection at Station A counts objects and bounds the count.
    bool detect = plant.read_sensor(state, detect_sensor).value >= 0.5;
    if (detect && !prev_detect) {
      ++rep.o_count;
      run.event(t, "DETECTION", {{"o_count", std::to_string(rep.o_count)}});
      if (static_cast<double>(rep.o_count) > config.tau_o.max && !count_incident) {
        count_incident = true;
        run.incident(bound_incident(
            t, "ObjectCountExceeded", "tau_o", {model.conveyor_asset, detect_sensor},
            {{"o_count", static_cast<double>(rep.o_count)}, {"tau_o_max", config.tau_o.max}},
            Severity::Info, "object count above tau_o.max"));
      }
    }
    prev_detect = detect;
    state = plant.step(state, t == 0 ? std::span<const plant::ActuatorCommand>(start)
                                     : std::span<const plant::ActuatorCommand>());
    rep.plant_trace.push_back(plant::make_record(plant, state, {}));
  }
  if (pending > 0) {
    run.event(ticks, "LOAD_DEFERRED", {{"reason", "end_of_run"}, {"unserved", std::to_string(pending)}});
  }
  if (static_cast<double>(rep.o_count) < config.tau_o.min) {
    run.incident(bound_incident(
        ticks, "ObjectCountBelowMin", "tau_o", {model.conveyor_asset, detect_sensor},
        {{"o_count", static_cast<double>(rep.o_count)}, {"tau_o_min", config.tau_o.min}},
        Severity::Info, "object count below tau_o.min"));
  }
  if (!rep.plant_trace.empty()) rep.task_status = task_status_of(rep.plant_trace.back());

  run.decide();
  if (rep.outcome != Outcome::Incident) {
    // Rules for the accepted settings, then the PE settings.
    rep.pe_settings = config.settings();
    rep.pe_settings["velocity"] = in.velocity;
    auto& reg = *twin.rules;
    auto v_id = run.write_rule(rules::in_bounds(velocity_sensor, config.tau_v.min, config.tau_v.max),
                               {velocity_sensor, model.conveyor_asset},
                               threshold_id(reg, velocity_sensor), ticks);
    run.rule_provenance(v_id, model.conveyor_asset, velocity_sensor);
    auto c_id = run.write_rule(
        rules::count_at_most("o_count", static_cast<std::int64_t>(std::floor(config.tau_o.max))),
        {detect_sensor, model.conveyor_asset}, count_rule_for(reg, detect_sensor, "o_count"), ticks);
    run.rule_provenance(c_id, model.conveyor_asset, detect_sensor);
  }
  run.end(ticks);
  return std::move(rep);
}

RunReport run_arm_sim(TwinInstance& twin, const TwinConfig& config, const ArmInputs& in) {
  if (!std::isfinite(in.current) || !std::isfinite(in.pressure)) {
    throw Error(Errc::InvalidArgument, "current and pressure setpoints must be finite");
  }
  if (in.objects < 0) throw Error(Errc::InvalidArgument, "negative object count");
  Run run(twin, config, Mode::Simulation, RunKind::Arm, in);
  auto& rep = run.report();
  const auto model = twin.model_for(config);
  plant::Plant plant(model);
  const auto current_sensor = sensor_of_type(model, plant::SensorType::Current);
  const auto pressure_sensor = sensor_of_type(model, plant::SensorType::Pressure);
  const auto temp_sensor = sensor_of_type(model, plant::SensorType::Temperature);
  const auto& arm_asset = model.arm_asset;

  run.event(0, "RUN_START", {{"run", rep.run_id}, {"mode", "simulation"}, {"kind", "arm"}});

  // Start from C = P = 0 and accept only in-bounds setpoints.
  std::vector<plant::ActuatorCommand> pending{{model.arm_actuator, plant::CommandKind::ArmOn, 0}};
  bool setpoints_ok = true;
  auto setpoint = [&](const char* name, double value, const Bounds& b, const char* bound_name,
                      const std::string& sensor, plant::CommandKind kind) {
    if (b.contains(value)) {
      pending.push_back({model.arm_actuator, kind, value});
      run.event(0, "SETPOINT_ACCEPTED", {{"name", name}, {"value", format_number(value)}});
      return;
    }
    setpoints_ok = false;
    run.event(0, "SETPOINT_REJECTED", {{"name", name}, {"value", format_number(value)}});
    run.incident(bound_incident(0, "SetpointOutOfBounds", bound_name, {arm_asset, sensor},
                                {{name, value},
                                 {std::string(bound_name) + "_min", b.min},
                                 {std::string(bound_name) + "_max", b.max}},
                                Severity::Warning, std::string(name) + " setpoint rejected"));
  };
  setpoint("current", in.current, config.tau_c, "tau_c", current_sensor,
           plant::CommandKind::SetCurrent);
  setpoint("pressure", in.pressure, config.tau_p, "tau_p", pressure_sensor,
           plant::CommandKind::SetPressure);

  plant::PlantState state = plant.initial_state();
  auto advance = [&] {
    state = plant.step(state, pending);
    pending.clear();
    rep.plant_trace.push_back(plant::make_record(plant, state, {}));
  };

  std::int64_t since_check = 0;
  bool last_done = false;
  if (!setpoints_ok) {
    run.event(0, "WELD_SKIPPED", {{"reason", "setpoint_rejected"}});
  } else {
    const std::int64_t weld_ticks = model.weld_ticks();
    for (std::int64_t obj = 1; obj <= in.objects; ++obj) {
      if (state.tick + weld_ticks > config.max_ticks) {
        run.event(state.tick, "WELD_SKIPPED",
                  {{"reason", "max_ticks"}, {"remaining", std::to_string(in.objects - obj + 1)}});
        break;
      }
      // Health check once capacity is reached, before the next weld.
      if (since_check >= config.A_max_capacity) {
        rep.health_events.push_back({state.tick, rep.o_count, since_check});
        run.event(state.tick, "HEALTH_CHECK",
                  {{"o_count", std::to_string(rep.o_count)}, {"welds", std::to_string(since_check)}});
        since_check = 0;
      }
      pending.push_back({model.arm_actuator, plant::CommandKind::StartWeld, 0});
      run.event(state.tick, "WELD_START", {{"object", std::to_string(obj)}});
      bool breached = false;
      for (std::int64_t k = 0; k < weld_ticks; ++k) {
        advance();
        // Every heating tick is checked against tau_t.
        double temp = plant.read_sensor(state, temp_sensor).value;
        if (!config.tau_t.contains(temp)) {
          breached = true;
          run.incident(bound_incident(
              state.tick, "TemperatureBreach", "tau_t", {arm_asset, temp_sensor},
              {{"o_temp", temp}, {"current", in.current}, {"pressure", in.pressure},
               {"tau_t_min", config.tau_t.min}, {"tau_t_max", config.tau_t.max}},
              Severity::Warning, "object temperature left tau_t; weld aborted"));
          pending.push_back({model.arm_actuator, plant::CommandKind::AbortWeld, 0});
          run.event(state.tick, "WELD_ABORT", {{"object", std::to_string(obj)}});
          break;
        }
      }
      last_done = !breached;
      if (!breached) {
        ++rep.o_count;
        ++since_check;
        run.event(state.tick, "WELD_DONE",
                  {{"object", std::to_string(obj)}, {"o_count", std::to_string(rep.o_count)}});
      }
    }
    // Cool-down toward init_temp.
    const double init = model.init_temp;
    while (state.tick < config.max_ticks &&
           (!pending.empty() || std::abs(state.arm.object_temp - init) > 0.05)) {
      advance();
    }
  }
  rep.task_status = last_done ? 1 : 0;

  run.decide();
  if (rep.outcome != Outcome::Incident) {
    rep.pe_settings = config.settings();
    rep.pe_settings["current"] = in.current;
    rep.pe_settings["pressure"] = in.pressure;
    auto& reg = *twin.rules;
    const std::pair<const std::string*, const Bounds*> sensors[] = {
        {&current_sensor, &config.tau_c}, {&pressure_sensor, &config.tau_p}, {&temp_sensor, &config.tau_t}};
    for (const auto& [sensor, b] : sensors) {
      auto id = run.write_rule(rules::in_bounds(*sensor, b->min, b->max), {*sensor, arm_asset},
                               threshold_id(reg, *sensor), state.tick);
      run.rule_provenance(id, arm_asset, *sensor);
    }
    run.write_rule(rules::count_at_most("welds_since_check", config.A_max_capacity), {arm_asset},
                   count_rule_for(reg, arm_asset, "welds_since_check"), state.tick);
  }
  run.end(state.tick);
  return std::move(rep);
}

namespace {

/// The in-bounds atom of `rule` narrowed to the calibration range; other
/// operands of a conjunction are kept as they are.
rules::PredicatePtr calibrated(const rules::Rule& rule, const icm::CalibrationRecord& cal) {
  const auto* atom = rules::threshold_atom(*rule.description);
  if (atom == nullptr) return rule.description;
  double lo = std::max(atom->lo, cal.tau_min);
  double hi = std::min(atom->hi, cal.tau_max);
  if (lo > hi) {
    lo = cal.tau_min;
    hi = cal.tau_max;
  }
  auto narrowed = rules::in_bounds(atom->sensor_id, lo, hi);
  const auto* conj = std::get_if<rules::And>(&rule.description->node);
  if (conj == nullptr) return narrowed;
  std::vector<rules::PredicatePtr> ops;
  for (const auto& op : conj->operands) {
    ops.push_back(std::holds_alternative<rules::SensorInBounds>(op->node) ? narrowed : op);
  }
  return rules::all_of(std::move(ops));
}

}  // namespace

RunReport replicate(TwinInstance& twin, const plant::Trace& pe_trace,
                    const std::vector<icm::CalibrationRecord>& calibration, const TwinConfig& config) {
  // Every traced sensor needs its C&V bounds before replay starts.
  std::vector<std::string> sensors;
  for (const auto& rec : pe_trace) {
    for (const auto& reading : rec.readings) {
      if (std::find(sensors.begin(), sensors.end(), reading.sensor_id) == sensors.end()) {
        icm::calibration_for(calibration, reading.sensor_id);
        sensors.push_back(reading.sensor_id);
      }
    }
  }
  Run run(twin, config, Mode::Replication, RunKind::Replicate, ReplicateInputs{pe_trace, calibration});
  auto& rep = run.report();
  auto& reg = *twin.rules;
  run.event(pe_trace.empty() ? 0 : pe_trace.front().tick, "RUN_START",
            {{"run", rep.run_id}, {"mode", "replication"}, {"records", std::to_string(pe_trace.size())}});

  std::map<std::string, bool> failing;
  std::set<std::string> suppressed;
  std::set<std::string> shut_down;
  std::map<std::string, std::deque<std::int64_t>> criticals;
  std::map<std::string, std::vector<double>> history;
  std::set<std::int64_t> objects_seen;

  for (const auto& rec : pe_trace) {
    for (const auto& o : rec.objects) objects_seen.insert(o.object_id);
    rep.o_count = static_cast<std::int64_t>(objects_seen.size());
    for (const auto& reading : rec.readings) {
      auto& h = history[reading.sensor_id];
      h.push_back(reading.value);
      if (h.size() > kHistoryLimit) h.erase(h.begin());
    }

    for (const auto& reading : rec.readings) {
      const auto& cal = icm::calibration_for(calibration, reading.sensor_id);
      auto asset = rec.assets.find(reading.asset_id);
      if (asset == rec.assets.end()) {
        throw Error(Errc::MissingSignal, "tick " + std::to_string(rec.tick) + ": no status for asset '" +
                                             reading.asset_id + "'");
      }
      bool cc = icm::consistency_check(reading, cal) && asset->second;
      if (cc) {
        failing[reading.sensor_id] = false;
        continue;
      }
      if (failing[reading.sensor_id] || suppressed.contains(reading.sensor_id)) continue;
      failing[reading.sensor_id] = true;

      run.event(rec.tick, "CC_FAIL",
                {{"sensor", reading.sensor_id},
                 {"value", format_number(reading.value)},
                 {"asset", reading.asset_id},
                 {"asset_on", asset->second ? "true" : "false"}});

      // Invoke the S&S rules associated with the sensor.
      rules::TelemetrySnapshot snap;
      for (const auto& r : rec.readings) snap.sensors[r.sensor_id] = r.value;
      snap.assets.insert(rec.assets.begin(), rec.assets.end());
      snap.counters["o_count"] = rep.o_count;
      snap.history = history;
      std::optional<std::pair<rules::Rule, rules::Verdict>> violated;
      for (const auto& rule : reg.find_by_association(reading.sensor_id)) {
        try {
          auto verdict = rules::evaluate(rule, snap);
          if (!verdict.pass) {
            violated.emplace(rule, std::move(verdict));
            break;
          }
        } catch (const Error& e) {
          if (e.code() != Errc::MissingSignal) throw;
        }
      }

      Incident inc;
      inc.tick = rec.tick;
      inc.kind = "ConsistencyFailure";
      inc.actor_ids = {reading.asset_id, reading.sensor_id};
      inc.observed = {{reading.sensor_id, reading.value},
                      {"tau_min", cal.tau_min},
                      {"tau_max", cal.tau_max},
                      {"asset_on", asset->second ? 1.0 : 0.0}};
      auto cv = icm::build_cv_provenance(twin.ek, twin.actor, reading.asset_id, asset->second,
                                         reading, cal, rec.time);
      if (violated) {
        // Process calibration service.
        const auto& [rule, verdict] = *violated;
        double proposed = std::clamp(reading.value, cal.tau_min, cal.tau_max);
        inc.violated_rule = {rule.rule_id, rule.version};
        inc.severity = Severity::Warning;
        inc.action_taken = ServiceAction::CalibrationService;
        inc.observed["proposed"] = proposed;
        inc.detail = verdict.failures.empty() ? "rule violated" : "violates " + verdict.failures.front().atom;
        run.incident(std::move(inc), {cv});
        run.event(rec.tick, "SERVICE_CALL",
                  {{"service", "calibration_service"},
                   {"sensor", reading.sensor_id},
                   {"proposed", format_number(proposed)}});
        run.write_rule(calibrated(rule, cal), rule.association, rule.rule_id, rec.tick);
      } else {
        // Scheduling service flags the asset and silences the sensor.
        inc.violated_rule = {std::string(kNoMatchingRule), 0};
        inc.severity = Severity::Critical;
        inc.action_taken = ServiceAction::SchedulingService;
        inc.detail = "no S&S rule matches; asset flagged for inspection";
        run.incident(std::move(inc), {cv});
        run.event(rec.tick, "SERVICE_CALL",
                  {{"service", "scheduling_service"},
                   {"sensor", reading.sensor_id},
                   {"asset", reading.asset_id}});
        suppressed.insert(reading.sensor_id);
        run.write_rule(rules::all_of({rules::in_bounds(reading.sensor_id, cal.tau_min, cal.tau_max),
                                      rules::status_is(reading.asset_id, true)}),
                       {reading.sensor_id, reading.asset_id}, std::nullopt, rec.tick);

        auto& window = criticals[reading.asset_id];
        window.push_back(rec.tick);
        while (!window.empty() && rec.tick - window.front() >= kShutdownWindowTicks) window.pop_front();
        if (static_cast<int>(window.size()) >= kShutdownCriticalCount &&
            !shut_down.contains(reading.asset_id)) {
          shut_down.insert(reading.asset_id);
          Incident sd;
          sd.tick = rec.tick;
          sd.kind = "Shutdown";
          sd.violated_rule = {std::string(kNoMatchingRule), 0};
          sd.actor_ids = {reading.asset_id};
          sd.observed = {{"critical_incidents", static_cast<double>(window.size())},
                         {"window_ticks", static_cast<double>(kShutdownWindowTicks)}};
          sd.severity = Severity::Critical;
          sd.action_taken = ServiceAction::Shutdown;
          sd.detail = "repeated critical incidents; asset switched off";
          run.incident(std::move(sd));
          run.event(rec.tick, "SERVICE_CALL", {{"service", "shutdown"}, {"asset", reading.asset_id}});
        }
      }
    }
  }
  if (!pe_trace.empty()) rep.task_status = task_status_of(pe_trace.back());
  run.decide();
  run.end(pe_trace.empty() ? 0 : pe_trace.back().tick);
  return std::move(rep);
}

RunReport tune_and_rerun(TwinInstance& twin, const RunReport& previous, const TwinConfig& new_config) {
  if (previous.outcome != Outcome::Incident) {
    throw Error(Errc::NotTunable, "run " + previous.run_id + " ended without an incident");
  }
  new_config.validate();
  RunReport next = std::visit(
      [&](const auto& in) -> RunReport {
        using T = std::decay_t<decltype(in)>;
        if constexpr (std::is_same_v<T, ConveyorInputs>) {
          return run_conveyor_sim(twin, new_config, in);
        } else if constexpr (std::is_same_v<T, ArmInputs>) {
          return run_arm_sim(twin, new_config, in);
        } else {
          return replicate(twin, in.trace, in.calibration, new_config);
        }
      },
      previous.inputs);
  next.parent_run_id = previous.run_id;
  next.events.insert(next.events.begin() + 1,
                     TraceEvent{0, 0.0, "TUNED", {{"parent", previous.run_id}}});
  return next;
}

}  // namespace tts::twin
