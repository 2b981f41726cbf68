// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "tts/common/error.hpp"
#include "tts/common/text.hpp"
#include "tts/icm/knowledge.hpp"
#include "tts/service/service.hpp"
#include "tts/verify/verify.hpp"

namespace tts::service {

using json = nlohmann::ordered_json;

namespace {

constexpr std::size_t kLiveTraceCap = 20000;
constexpr const char* kLiveRun = "LIVE";

json parse_body(const Request& r) {
  if (r.body.find_first_not_of(" \t\r\n") == std::string::npos) return json::object();
  try {
    return json::parse(r.body);
  } catch (const json::exception& e) {
    throw Error(Errc::Malformed, std::string("request body: ") + e.what());
  }
}

json object_body(const Request& r) {
  auto j = parse_body(r);
  if (!j.is_object()) throw Error(Errc::Malformed, "request body: expected an object");
  return j;
}

Response reply(const json& j, int status = 200) {
  return {status, j.dump(2) + "\n", "application/json"};
}

Response error_reply(int status, std::string_view code, const std::string& message) {
  json j{{"error", {{"code", code}, {"message", message}}}};
  return reply(j, status);
}

double number_field(const json& j, const char* key) {
  if (!j.contains(key)) throw Error(Errc::Malformed, std::string("missing field '") + key + "'");
  const auto& v = j.at(key);
  if (!v.is_number()) throw Error(Errc::Malformed, std::string("field '") + key + "' must be a number");
  double d = v.get<double>();
  if (!is_finite(d)) throw Error(Errc::NonFiniteCommand, std::string("field '") + key + "' is not finite");
  return d;
}

std::int64_t int_field(const json& j, const char* key, std::int64_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer()) throw Error(Errc::Malformed, std::string("field '") + key + "' must be an integer");
  return v.get<std::int64_t>();
}

std::string string_field(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string())
    throw Error(Errc::Malformed, std::string("missing string field '") + key + "'");
  return j.at(key).get<std::string>();
}

twin::TwinConfig config_override(const json& body, const char* key, const twin::TwinConfig& base) {
  if (!body.contains(key)) return base;
  if (!body.at(key).is_object()) throw Error(Errc::Malformed, std::string("'") + key + "' must be an object");
  return twin::twin_config_from_json(body.at(key).dump(), base);
}

std::set<std::string> string_set(const json& j, const char* key) {
  std::set<std::string> out;
  if (!j.contains(key)) return out;
  if (!j.at(key).is_array()) throw Error(Errc::Malformed, std::string("'") + key + "' must be an array");
  for (const auto& v : j.at(key)) {
    if (!v.is_string()) throw Error(Errc::Malformed, std::string("'") + key + "' must hold strings");
    out.insert(v.get<std::string>());
  }
  return out;
}

json rule_json(const rules::Rule& r) {
  return {{"rule_id", r.rule_id},
          {"version", r.version},
          {"predicate", rules::to_text(r.description)},
          {"association", r.association},
          {"author", r.author},
          {"active", r.active()},
          {"created_at", r.created_at},
          {"updated_at", r.updated_at}};
}

json findings_json(const std::vector<icm::Finding>& findings) {
  json out = json::array();
  for (const auto& f : findings) out.push_back({{"code", f.code}, {"subject", f.subject}, {"message", f.message}});
  return out;
}

std::vector<icm::Finding> bundle_findings(const icm::SpecBundle& b) {
  auto out = icm::validate_spec(b.ek).findings;
  auto cal = icm::validate_calibration(b.ek, b.calibration).findings;
  auto dk = icm::validate_domain_knowledge(b.ek, b.domain_knowledge).findings;
  out.insert(out.end(), cal.begin(), cal.end());
  out.insert(out.end(), dk.begin(), dk.end());
  return out;
}

std::vector<icm::CalibrationRecord> parse_calibration(const json& records) {
  json wrapper{{"devices", json::array()}, {"sensors", json::array()}, {"calibration", records}};
  return icm::parse_spec(wrapper.dump()).calibration;
}

std::string random_id() {
  thread_local std::mt19937_64 rng{std::random_device{}()};
  std::ostringstream out;
  out << std::hex << rng() << rng();
  return out.str();
}

/// "/v1/runs/:id/log" against "/v1/runs/RUN-3/log".
bool match(std::string_view pattern, std::string_view path, std::map<std::string, std::string>& params) {
  auto split = [](std::string_view s) {
    std::vector<std::string_view> parts;
    std::size_t pos = 0;
    while (pos < s.size()) {
      if (s[pos] == '/') {
        ++pos;
        continue;
      }
      auto end = s.find('/', pos);
      if (end == std::string_view::npos) end = s.size();
      parts.push_back(s.substr(pos, end - pos));
      pos = end;
    }
    return parts;
  };
  auto a = split(pattern);
  auto b = split(path);
  if (a.size() != b.size()) return false;
  std::map<std::string, std::string> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].empty() && a[i][0] == ':') {
      out[std::string(a[i].substr(1))] = std::string(b[i]);
    } else if (a[i] != b[i]) {
      return false;
    }
  }
  params = std::move(out);
  return true;
}

}  // namespace

int http_status(Errc code) noexcept {
  switch (code) {
    case Errc::Malformed:
    case Errc::TraceParse:
    case Errc::MalformedPredicate:
    case Errc::InvalidArgument:
      return 400;
    case Errc::Unauthorized:
      return 403;
    case Errc::NotFound:
    case Errc::UnknownRule:
    case Errc::UnknownSensor:
    case Errc::UnknownActuator:
    case Errc::UnknownReference:
      return 404;
    case Errc::SlotOccupied:
    case Errc::NotTunable:
      return 409;
    case Errc::LedgerUnavailable:
      return 503;
    case Errc::Io:
      return 500;
    case Errc::NonFiniteCommand:
    case Errc::SensorMismatch:
    case Errc::MissingSignal:
    case Errc::EmptyBatch:
    case Errc::InvalidSpec:
    case Errc::SetpointOutOfBounds:
    case Errc::ConfigInvalid:
    case Errc::CalibrationGap:
    case Errc::BudgetExceeded:
    case Errc::ValidationFailed:
      return 422;
  }
  return 500;
}

// ---------------------------------------------------------------------------

struct Api::State {
  std::mutex mu;
  std::shared_ptr<const ledger::KeyRing> keys;
  std::shared_ptr<ledger::Ledger> ledger;
  icm::SpecBundle bundle;
  std::shared_ptr<rules::RuleRegistry> rules;
  twin::TwinInstance twin;
  twin::TwinConfig config;
  Principal system{"system", {Role::System}};

  std::map<std::string, SessionContext> sessions;

  std::map<std::string, twin::RunReport> runs;
  std::vector<std::string> run_order;

  // Live plant.
  std::optional<plant::Plant> plant;
  plant::PlantState live;
  bool running = false;
  double step_rate = 10.0;
  std::int64_t load_every = 0;  // 0: loads only on request
  std::set<std::int64_t> weld_started;
  std::vector<plant::ActuatorCommand> pending;
  std::vector<plant::FaultInjection> faults;
  std::deque<plant::TraceRecord> recorded;
  std::map<std::string, std::pair<double, std::string>> setpoints;  // name -> value, E_ID
  std::int64_t live_incidents = 0;
  std::size_t persisted_blocks = 0;
};

const std::vector<Api::Route>& Api::routes() {
  using A = Action;
  static const std::vector<Route> table{
      {{"GET", "/v1/health", std::nullopt, true}, &Api::get_health},
      {{"POST", "/v1/sessions", std::nullopt, true}, &Api::post_session},
      {{"GET", "/v1/spec", std::nullopt}, &Api::get_spec},
      {{"POST", "/v1/spec", A::WriteSpec}, &Api::post_spec},
      {{"POST", "/v1/spec/validate", std::nullopt}, &Api::post_spec_validate},
      {{"POST", "/v1/calibration", A::WriteSpec}, &Api::post_calibration},
      {{"GET", "/v1/config", std::nullopt}, &Api::get_config},
      {{"PUT", "/v1/config", A::WriteSpec}, &Api::put_config},
      {{"GET", "/v1/endpoints", std::nullopt}, &Api::get_endpoints},
      {{"POST", "/v1/plant/start", A::ControlPlant}, &Api::post_plant_start},
      {{"POST", "/v1/plant/stop", A::ControlPlant}, &Api::post_plant_stop},
      {{"POST", "/v1/plant/step-rate", A::ControlPlant}, &Api::post_plant_step_rate},
      {{"POST", "/v1/plant/step", A::ControlPlant}, &Api::post_plant_step},
      {{"POST", "/v1/plant/setpoint", A::IssueSetpoint}, &Api::post_plant_setpoint},
      {{"POST", "/v1/plant/load", A::ControlPlant}, &Api::post_plant_load},
      {{"POST", "/v1/plant/fault", A::InjectFault}, &Api::post_plant_fault},
      {{"GET", "/v1/plant/telemetry", std::nullopt}, &Api::get_plant_telemetry},
      {{"GET", "/v1/plant/trace", A::RunTwin}, &Api::get_plant_trace},
      {{"POST", "/v1/runs/conveyor", A::RunTwin}, &Api::post_run_conveyor},
      {{"POST", "/v1/runs/arm", A::RunTwin}, &Api::post_run_arm},
      {{"POST", "/v1/runs/replicate", A::RunTwin}, &Api::post_run_replicate},
      {{"POST", "/v1/runs/:id/tune", A::RunTwin}, &Api::post_run_tune},
      {{"GET", "/v1/runs", std::nullopt}, &Api::get_runs},
      {{"GET", "/v1/runs/:id", std::nullopt}, &Api::get_run},
      {{"GET", "/v1/runs/:id/log", std::nullopt}, &Api::get_run_log},
      {{"GET", "/v1/runs/:id/trace", std::nullopt}, &Api::get_run_trace},
      {{"GET", "/v1/rules", std::nullopt}, &Api::get_rules},
      {{"GET", "/v1/rules/:id", std::nullopt}, &Api::get_rule},
      {{"POST", "/v1/rules", A::WriteRule}, &Api::post_rule},
      {{"PUT", "/v1/rules/:id", A::WriteRule}, &Api::put_rule},
      {{"POST", "/v1/rules/:id/deactivate", A::WriteRule}, &Api::post_rule_deactivate},
      {{"GET", "/v1/ledger/query", A::ReadLedger}, &Api::get_ledger_query},
      {{"GET", "/v1/ledger/verify", A::ReadLedger}, &Api::get_ledger_verify},
      {{"POST", "/v1/ledger/verify-file", A::ReadLedger}, &Api::post_ledger_verify_file},
      {{"GET", "/v1/ledger/export", A::ReadLedger}, &Api::get_ledger_export},
      {{"POST", "/v1/verify", A::RunVerification}, &Api::post_verify},
      {{"GET", "/v1/stream", std::nullopt}, &Api::get_stream},
  };
  return table;
}

const std::vector<EndpointSpec>& endpoint_table() {
  static const std::vector<EndpointSpec> specs = [] {
    std::vector<EndpointSpec> out;
    for (const auto& r : Api::routes()) out.push_back(r.spec);
    return out;
  }();
  return specs;
}

Api::Api(ServiceConfig config, Clock clock)
    : config_(std::move(config)), clock_(std::move(clock)), stream_(config_.telemetry_buffer),
      state_(std::make_unique<State>()) {
  const bool injected = static_cast<bool>(clock_);
  if (!clock_) {
    if (config_.logical_clock) {
      clock_ = ledger::stepping_clock();
    } else {
      clock_ = [] {
        using namespace std::chrono;
        return duration<double>(system_clock::now().time_since_epoch()).count();
      };
    }
  }
  auto& s = *state_;
  s.step_rate = config_.step_rate;

  std::vector<std::string> entities{s.system.entity_id};
  for (const auto& t : config_.tokens) entities.push_back(t.principal.entity_id);
  s.keys = std::make_shared<const ledger::KeyRing>(ledger::KeyRing::deterministic(config_.key_seed, entities));

  if (config_.spec_file.empty()) {
    s.bundle = icm::reference_bundle();
  } else {
    std::ifstream in(config_.spec_file, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot read spec file " + config_.spec_file);
    std::stringstream buf;
    buf << in.rdbuf();
    s.bundle = icm::parse_spec(buf.str());
  }

  auto clock_fn = [this] { return clock_(); };
  const bool own_logical = config_.logical_clock && !injected;
  if (!config_.ledger_file.empty() && std::filesystem::exists(config_.ledger_file)) {
    std::ifstream in(config_.ledger_file, std::ios::binary);
    Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto imported = ledger::Ledger::import_chain(bytes, s.keys, clock_fn);
    auto check = imported->verify_chain();
    if (!check.intact) {
      throw Error(Errc::LedgerUnavailable, "ledger file " + config_.ledger_file + " is broken at block " +
                                               std::to_string(check.broken_at) + ": " + check.detail);
    }
    s.ledger = std::shared_ptr<ledger::Ledger>(std::move(imported));
    // Continue the logical timeline after the last persisted block.
    if (own_logical && s.ledger->block_count() > 0) {
      clock_ = ledger::stepping_clock(s.ledger->block(s.ledger->block_count() - 1)->timestamp + 1.0);
    }
  } else {
    s.ledger = std::make_shared<ledger::Ledger>(ledger::LedgerConfig{}, s.keys, clock_fn);
  }
  s.persisted_blocks = s.ledger->block_count();

  s.rules = std::make_shared<rules::RuleRegistry>(s.ledger, s.bundle.ek, clock_fn);
  if (s.ledger->block_count() == 0) {
    auto findings = bundle_findings(s.bundle);
    if (!findings.empty()) throw Error(Errc::InvalidSpec, "spec has " + std::to_string(findings.size()) + " findings");
    twin::publish_spec(*s.ledger, s.system, s.bundle.ek, s.bundle.calibration);
    s.rules->derive_threshold_rules(s.bundle.calibration, s.system);
  } else {
    s.rules->reload();
    if (auto cal = twin::latest_calibration(*s.ledger)) s.bundle.calibration = *cal;
  }
  s.twin = twin::generate_twin(s.bundle.ek, s.bundle.domain_knowledge, s.rules, s.system);
  reset_plant_locked();
  persist_locked();
}

Api::~Api() = default;

std::shared_ptr<ledger::Ledger> Api::ledger() const {
  std::lock_guard lock(state_->mu);
  return state_->ledger;
}

double Api::step_rate() const {
  std::lock_guard lock(state_->mu);
  return state_->step_rate;
}

SessionContext Api::open_session(const std::string& token) {
  for (const auto& g : config_.tokens) {
    if (g.token == token) {
      double now = clock_();
      SessionContext ctx{g.principal, random_id(), now, now + config_.session_ttl};
      std::lock_guard lock(state_->mu);
      state_->sessions[ctx.session_id] = ctx;
      return ctx;
    }
  }
  throw Error(Errc::Unauthorized, "unknown token");
}

SessionContext Api::authenticate(const Request& request) {
  double now = clock_();
  std::lock_guard lock(state_->mu);
  auto it = state_->sessions.find(request.bearer);
  if (request.bearer.empty() || it == state_->sessions.end()) {
    throw Error(Errc::Unauthorized, "missing or unknown session");
  }
  if (now >= it->second.expiry) {
    state_->sessions.erase(it);
    throw Error(Errc::Unauthorized, "session expired");
  }
  return it->second;
}

Response Api::handle(const Request& request) {
  const Route* route = nullptr;
  Params params;
  bool path_known = false;
  for (const auto& r : routes()) {
    Params p;
    if (!match(r.spec.pattern, request.path, p)) continue;
    path_known = true;
    if (r.spec.method == request.method) {
      route = &r;
      params = std::move(p);
      break;
    }
  }
  if (!route) {
    if (path_known) return error_reply(405, "MethodNotAllowed", request.method + " " + request.path);
    return error_reply(404, to_string(Errc::NotFound), "no endpoint " + request.path);
  }

  SessionContext session;
  if (!route->spec.open) {
    try {
      session = authenticate(request);
    } catch (const Error& e) {
      return error_reply(401, "Unauthenticated", e.what());
    }
    if (route->spec.action && !permits(session.principal, *route->spec.action)) {
      return error_reply(403, to_string(Errc::Unauthorized),
                         session.principal.entity_id + " may not " +
                             std::string(to_string(*route->spec.action)));
    }
  }

  try {
    Response r = (this->*(route->handler))(session, request, params);
    if (request.method != "GET") {
      std::lock_guard lock(state_->mu);
      persist_locked();
    }
    return r;
  } catch (const Error& e) {
    if (request.method != "GET") {
      std::lock_guard lock(state_->mu);
      persist_locked();
    }
    return error_reply(http_status(e.code()), to_string(e.code()), e.what());
  } catch (const std::exception& e) {
    return error_reply(500, "Internal", e.what());
  }
}

void Api::persist_locked() {
  auto& s = *state_;
  if (config_.ledger_file.empty() || s.ledger->block_count() == s.persisted_blocks) return;
  auto bytes = s.ledger->export_chain();
  auto tmp = config_.ledger_file + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::Io, "cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::Io, "cannot write " + tmp);
  }
  std::filesystem::rename(tmp, config_.ledger_file);
  s.persisted_blocks = s.ledger->block_count();
}

// ---------------------------------------------------------------------------
// Sessions, spec, configuration

Response Api::get_health(const SessionContext&, const Request&, const Params&) {
  std::lock_guard lock(state_->mu);
  return reply({{"status", "ok"},
                {"ledger_blocks", state_->ledger->block_count()},
                {"plant_tick", state_->live.tick},
                {"running", state_->running},
                {"stream_seq", stream_.last_seq()}});
}

Response Api::post_session(const SessionContext&, const Request& r, const Params&) {
  auto body = object_body(r);
  SessionContext ctx;
  try {
    ctx = open_session(string_field(body, "token"));
  } catch (const Error& e) {
    if (e.code() == Errc::Unauthorized) return error_reply(401, "Unauthenticated", e.what());
    throw;
  }
  json roles = json::array();
  for (auto role : ctx.principal.roles) roles.push_back(std::string(to_string(role)));
  return reply({{"session_id", ctx.session_id},
                {"entity_id", ctx.principal.entity_id},
                {"roles", roles},
                {"issued_at", ctx.issued_at},
                {"expires_at", ctx.expiry}},
               201);
}

Response Api::get_spec(const SessionContext&, const Request&, const Params&) {
  std::lock_guard lock(state_->mu);
  return {200, icm::dump_spec(state_->bundle), "application/json"};
}

Response Api::post_spec_validate(const SessionContext&, const Request& r, const Params&) {
  auto bundle = icm::parse_spec(r.body);
  auto findings = bundle_findings(bundle);
  return reply({{"ok", findings.empty()},
                {"spec_digest", to_hex(bundle.ek.digest())},
                {"findings", findings_json(findings)}});
}

Response Api::post_spec(const SessionContext& session, const Request& r, const Params&) {
  auto bundle = icm::parse_spec(r.body);
  auto findings = bundle_findings(bundle);
  if (!findings.empty()) {
    json j{{"error", {{"code", to_string(Errc::InvalidSpec)},
                      {"message", std::to_string(findings.size()) + " findings"},
                      {"findings", findings_json(findings)}}}};
    return reply(j, 422);
  }
  auto& s = *state_;
  std::lock_guard lock(s.mu);
  twin::publish_spec(*s.ledger, session.principal, bundle.ek, bundle.calibration);
  auto registry = std::make_shared<rules::RuleRegistry>(s.ledger, bundle.ek, [this] { return clock_(); });
  registry->reload();
  auto ids = registry->derive_threshold_rules(bundle.calibration, session.principal);
  auto fresh = twin::generate_twin(bundle.ek, bundle.domain_knowledge, registry, s.system);
  fresh.run_counter = s.twin.run_counter;
  s.bundle = std::move(bundle);
  s.rules = std::move(registry);
  s.twin = std::move(fresh);
  reset_plant_locked();
  return reply({{"spec_digest", to_hex(s.bundle.ek.digest())},
                {"rules", ids},
                {"ledger_blocks", s.ledger->block_count()},
                {"warnings", s.twin.warnings}},
               201);
}

Response Api::post_calibration(const SessionContext& session, const Request& r, const Params&) {
  auto body = parse_body(r);
  json records = body.is_object() && body.contains("calibration") ? body.at("calibration") : body;
  auto cal = parse_calibration(records);
  auto& s = *state_;
  std::lock_guard lock(s.mu);
  auto report = icm::validate_calibration(s.bundle.ek, cal);
  if (!report.ok()) {
    json j{{"error", {{"code", to_string(Errc::InvalidSpec)},
                      {"message", std::to_string(report.findings.size()) + " findings"},
                      {"findings", findings_json(report.findings)}}}};
    return reply(j, 422);
  }
  twin::publish_spec(*s.ledger, session.principal, s.bundle.ek, cal);
  auto ids = s.rules->derive_threshold_rules(cal, session.principal);
  s.bundle.calibration = cal;
  s.twin.calibration = cal;
  return reply({{"rules", ids}, {"ledger_blocks", s.ledger->block_count()}}, 201);
}

Response Api::get_config(const SessionContext&, const Request&, const Params&) {
  std::lock_guard lock(state_->mu);
  return {200, twin::to_json(state_->config), "application/json"};
}

Response Api::put_config(const SessionContext&, const Request& r, const Params&) {
  auto body = object_body(r);
  std::lock_guard lock(state_->mu);
  auto next = twin::twin_config_from_json(body.dump(), state_->config);
  bool model_changed = next.dt != state_->config.dt || next.d != state_->config.d ||
                       next.k_heat != state_->config.k_heat || next.k_cool != state_->config.k_cool;
  state_->config = next;
  if (model_changed) reset_plant_locked();
  return {200, twin::to_json(state_->config), "application/json"};
}

Response Api::get_endpoints(const SessionContext&, const Request&, const Params&) {
  std::lock_guard lock(state_->mu);
  const auto& t = state_->twin;
  json eps = json::array();
  for (const auto& e : t.endpoints) {
    eps.push_back({{"id", e.id},
                   {"kind", e.kind == twin::EndpointKind::Device ? "device" : "sensor"},
                   {"type", e.type},
                   {"owner", e.owner}});
  }
  json routes = json::array();
  for (const auto& [from, to] : t.bus.routes()) routes.push_back({{"from", from}, {"to", to}});
  return reply({{"endpoints", eps}, {"routes", routes}, {"bound_rules", t.bound_rule_ids}, {"warnings", t.warnings}});
}

// ---------------------------------------------------------------------------
// Live plant

void Api::reset_plant_locked() {
  auto& s = *state_;
  s.plant.emplace(s.twin.model_for(s.config));
  s.live = s.plant->initial_state(config_.seed);
  s.running = false;
  s.load_every = 0;
  s.weld_started.clear();
  s.pending.clear();
  s.faults.clear();
  s.recorded.clear();
  s.setpoints.clear();
}

void Api::step_locked(std::int64_t ticks) {
  auto& s = *state_;
  const auto& m = s.plant->config();
  for (std::int64_t i = 0; i < ticks; ++i) {
    if (s.running && s.load_every > 0 && s.live.tick % s.load_every == 0 && s.plant->slot_free(s.live)) {
      s.live = s.plant->load_object(s.live);
    }
    // PLC2 logic: weld each chassis once as it reaches Station B.
    if (s.live.arm.enabled && s.live.arm.task_status != plant::TaskStatus::Welding) {
      for (const auto& o : s.live.belt_objects) {
        bool at_b = o.position >= m.station_b_position && o.position <= m.station_b_position + m.object_length;
        if (at_b && !o.welded && s.weld_started.insert(o.object_id).second) {
          s.pending.push_back({m.arm_actuator, plant::CommandKind::StartWeld, 0});
          break;
        }
      }
    }
    s.live = s.plant->step(s.live, s.pending, s.faults);
    s.pending.clear();
    auto record = plant::make_record(*s.plant, s.live, s.faults);
    json sp = json::object();
    for (const auto& [name, v] : s.setpoints) sp[name] = {{"value", v.first}, {"issued_by", v.second}};
    json payload{{"tick", record.tick},
                 {"running", s.running},
                 {"setpoints", sp},
                 {"record", json::parse(plant::to_line(record))}};
    s.recorded.push_back(std::move(record));
    if (s.recorded.size() > kLiveTraceCap) s.recorded.pop_front();
    stream_.publish("telemetry", payload.dump());
  }
}

void Api::tick_if_running() {
  std::lock_guard lock(state_->mu);
  if (state_->running) step_locked(1);
}

void Api::publish_incident(const twin::Incident& incident, const std::string& run_id) {
  auto slash = incident.incident_id.rfind("/INC-");
  std::int64_t run_seq = slash == std::string::npos ? 0 : std::stoll(incident.incident_id.substr(slash + 5));
  json payload{{"run_id", run_id}, {"run_seq", run_seq}, {"incident", json::parse(twin::to_json(incident))}};
  stream_.publish("incident", payload.dump());
}

Response Api::post_plant_start(const SessionContext&, const Request& r, const Params&) {
  auto body = object_body(r);
  auto load_every = int_field(body, "load_every", 0);
  if (load_every < 0) throw Error(Errc::ValidationFailed, "load_every must not be negative");
  auto& s = *state_;
  std::lock_guard lock(s.mu);
  s.load_every = load_every;
  const auto& m = s.plant->config();
  s.pending.push_back({m.motor_actuator, plant::CommandKind::MotorOn, 0});
  s.pending.push_back({m.arm_actuator, plant::CommandKind::ArmOn, 0});
  s.running = true;
  return reply({{"running", true}, {"tick", s.live.tick}, {"load_every", s.load_every}});
}

Response Api::post_plant_stop(const SessionContext&, const Request&, const Params&) {
  auto& s = *state_;
  std::lock_guard lock(s.mu);
  const auto& m = s.plant->config();
  s.pending.push_back({m.motor_actuator, plant::CommandKind::MotorOff, 0});
  s.pending.push_back({m.arm_actuator, plant::CommandKind::ArmOff, 0});
  s.running = false;
  step_locked(1);
  return reply({{"running", false}, {"tick", s.live.tick}});
}

Response Api::post_plant_step_rate(const SessionContext&, const Request& r, const Params&) {
  auto body = object_body(r);
  double rate = number_field(body, "rate");
  if (!(rate > 0) || rate > 1000) throw Error(Errc::ValidationFailed, "rate must lie in (0, 1000] ticks/s");
  std::lock_guard lock(state_->mu);
  state_->step_rate = rate;
  return reply({{"rate", rate}});
}

Response Api::post_plant_step(const SessionContext&, const Request& r, const Params&) {
  auto body = object_body(r);
  auto ticks = int_field(body, "ticks", 1);
  if (ticks < 1 || ticks > 100000) throw Error(Errc::ValidationFailed, "ticks must lie in [1, 100000]");
  std::lock_guard lock(state_->mu);
  step_locked(ticks);
  return reply({{"tick", state_->live.tick}, {"time", state_->live.time}});
}

Response Api::post_plant_setpoint(const SessionContext& session, const Request& r, const Params&) {
  auto body = object_body(r);
  auto name = string_field(body, "name");
  double value = number_field(body, "value");
  auto& s = *state_;
  std::lock_guard lock(s.mu);
  const auto& m = s.plant->config();
  struct Target {
    const char* bound;
    twin::Bounds tau;
    std::string actuator;
    plant::CommandKind kind;
    std::string asset;
  };
  std::optional<Target> t;
  if (name == "V" || name == "velocity") {
    name = "V";
    t = Target{"tau_v", s.config.tau_v, m.motor_actuator, plant::CommandKind::SetVelocity, m.conveyor_asset};
  } else if (name == "C" || name == "current") {
    name = "C";
    t = Target{"tau_c", s.config.tau_c, m.arm_actuator, plant::CommandKind::SetCurrent, m.arm_asset};
  } else if (name == "P" || name == "pressure") {
    name = "P";
    t = Target{"tau_p", s.config.tau_p, m.arm_actuator, plant::CommandKind::SetPressure, m.arm_asset};
  } else {
    throw Error(Errc::InvalidArgument, "unknown setpoint '" + name + "' (expected V, C or P)");
  }
  if (!t->tau.contains(value)) {
    twin::Incident inc;
    inc.incident_id = std::string(kLiveRun) + "/INC-" + std::to_string(++s.live_incidents);
    inc.tick = s.live.tick;
    inc.kind = "SetpointOutOfBounds";
    inc.violated_rule = {std::string("config:") + t->bound, 0};
    inc.actor_ids = {t->asset, session.principal.entity_id};
    inc.observed = {{name, value}, {"tau_min", t->tau.min}, {"tau_max", t->tau.max}};
    inc.severity = twin::Severity::Warning;
    inc.action_taken = twin::ServiceAction::None;
    inc.detail = "setpoint " + name + "=" + format_number(value) + " rejected; issued by " +
                 session.principal.entity_id;
    s.ledger->append({s.ledger->make_entry(ledger::EntryKind::IncidentEntry, {inc.incident_id, inc.actor_ids},
                                           twin::encode(inc))},
                     s.system);
    publish_incident(inc, kLiveRun);
    json j{{"error", {{"code", to_string(Errc::SetpointOutOfBounds)},
                      {"message", inc.detail},
                      {"incident", json::parse(twin::to_json(inc))}}}};
    return reply(j, 422);
  }
  s.pending.push_back({t->actuator, t->kind, value});
  s.setpoints[name] = {value, session.principal.entity_id};
  return reply({{"name", name}, {"value", value}, {"issued_by", session.principal.entity_id},
                {"applies_at_tick", s.live.tick + 1}});
}

Response Api::post_plant_load(const SessionContext&, const Request&, const Params&) {
  auto& s = *state_;
  std::lock_guard lock(s.mu);
  s.live = s.plant->load_object(s.live);
  return reply({{"object_id", s.live.next_object_id - 1}, {"tick", s.live.tick}});
}

Response Api::post_plant_fault(const SessionContext& session, const Request& r, const Params&) {
  auto body = object_body(r);
  auto kind = plant::fault_kind_from_string(string_field(body, "kind"));
  auto target = string_field(body, "target");
  auto& s = *state_;
  std::lock_guard lock(s.mu);
  if (kind == plant::FaultKind::RuleTamperAttempt) {
    // The target entity tries to rewrite a rule with operator rights only.
    Principal intruder{target, {Role::PlantOperator}};
    auto rules = s.rules->active();
    std::optional<std::string> victim;
    std::set<std::string> assoc;
    if (!rules.empty()) {
      victim = rules.front().rule_id;
      assoc = rules.front().association;
    }
    auto before = s.ledger->block_count();
    std::string outcome = "accepted";
    try {
      s.rules->upsert_rule(intruder, rules::constant(true), assoc, victim);
    } catch (const Error& e) {
      outcome = std::string(to_string(e.code()));
    }
    twin::Incident inc;
    inc.incident_id = std::string(kLiveRun) + "/INC-" + std::to_string(++s.live_incidents);
    inc.tick = s.live.tick;
    inc.kind = "RuleTamperAttempt";
    inc.violated_rule = {"rbac:WriteRule", 0};
    inc.actor_ids = {target, session.principal.entity_id};
    inc.observed = {{"chain_blocks_before", static_cast<double>(before)},
                    {"chain_blocks_after", static_cast<double>(s.ledger->block_count())}};
    inc.severity = twin::Severity::Info;
    inc.detail = "upsert of " + victim.value_or("a new rule") + " by " + target + ": " + outcome;
    s.ledger->append({s.ledger->make_entry(ledger::EntryKind::IncidentEntry, {inc.incident_id, inc.actor_ids},
                                           twin::encode(inc))},
                     s.system);
    publish_incident(inc, kLiveRun);
    return reply({{"outcome", outcome}, {"incident", json::parse(twin::to_json(inc))}});
  }
  plant::FaultInjection f;
  f.kind = kind;
  f.target = target;
  f.magnitude = body.contains("magnitude") ? number_field(body, "magnitude") : 0.0;
  f.start_tick = int_field(body, "start_tick", s.live.tick + 1);
  f.end_tick = int_field(body, "end_tick", f.start_tick + int_field(body, "duration", 1'000'000) - 1);
  f.validate();
  s.faults.push_back(f);
  return reply({{"kind", std::string(plant::to_string(f.kind))},
                {"target", f.target},
                {"magnitude", f.magnitude},
                {"start_tick", f.start_tick},
                {"end_tick", f.end_tick},
                {"injected_by", session.principal.entity_id}},
               201);
}

Response Api::get_plant_telemetry(const SessionContext&, const Request&, const Params&) {
  auto& s = *state_;
  std::lock_guard lock(s.mu);
  auto record = plant::make_record(*s.plant, s.live, s.faults);
  json sp = json::object();
  for (const auto& [name, v] : s.setpoints) sp[name] = {{"value", v.first}, {"issued_by", v.second}};
  return reply({{"tick", s.live.tick},
                {"running", s.running},
                {"step_rate", s.step_rate},
                {"setpoints", sp},
                {"record", json::parse(plant::to_line(record))}});
}

Response Api::get_plant_trace(const SessionContext&, const Request&, const Params&) {
  std::lock_guard lock(state_->mu);
  plant::Trace t(state_->recorded.begin(), state_->recorded.end());
  return {200, plant::export_trace(t), "application/x-ndjson"};
}

// ---------------------------------------------------------------------------
// Twin runs

twin::TwinInstance Api::run_twin() {
  std::lock_guard lock(state_->mu);
  auto t = state_->twin;
  t.on_incident = [this](const twin::Incident& inc) {
    auto slash = inc.incident_id.rfind("/INC-");
    publish_incident(inc, inc.incident_id.substr(0, slash));
  };
  return t;
}

Response Api::store_run(twin::RunReport report) {
  json summary{{"run_id", report.run_id},
               {"kind", std::string(twin::to_string(report.kind))},
               {"outcome", std::string(twin::to_string(report.outcome))},
               {"incidents", report.incidents.size()}};
  stream_.publish("run", summary.dump());
  auto body = report.to_json();
  std::lock_guard lock(state_->mu);
  state_->run_order.push_back(report.run_id);
  state_->runs[report.run_id] = std::move(report);
  return {201, std::move(body), "application/json"};
}

Response Api::post_run_conveyor(const SessionContext&, const Request& r, const Params&) {
  auto body = object_body(r);
  twin::TwinConfig config;
  {
    std::lock_guard lock(state_->mu);
    config = config_override(body, "config", state_->config);
  }
  twin::ConveyorInputs in;
  in.velocity = number_field(body, "velocity");
  in.ticks = int_field(body, "ticks", 0);
  if (body.contains("loads")) {
    if (!body["loads"].is_array()) throw Error(Errc::Malformed, "'loads' must be an array");
    for (const auto& v : body["loads"]) {
      if (!v.is_number_integer()) throw Error(Errc::Malformed, "'loads' must hold integers");
      in.loads.push_back(v.get<std::int64_t>());
    }
  } else if (body.contains("load_every")) {
    auto every = int_field(body, "load_every", 1);
    if (every < 1) throw Error(Errc::ValidationFailed, "load_every must be positive");
    auto horizon = in.ticks > 0 ? in.ticks : config.max_ticks;
    for (std::int64_t t = 0; t < horizon; t += every) in.loads.push_back(t);
  }
  auto twin = run_twin();
  return store_run(twin::run_conveyor_sim(twin, config, in));
}

Response Api::post_run_arm(const SessionContext&, const Request& r, const Params&) {
  auto body = object_body(r);
  twin::TwinConfig config;
  {
    std::lock_guard lock(state_->mu);
    config = config_override(body, "config", state_->config);
  }
  twin::ArmInputs in{number_field(body, "current"), number_field(body, "pressure"), int_field(body, "objects", 1)};
  auto twin = run_twin();
  return store_run(twin::run_arm_sim(twin, config, in));
}

Response Api::post_run_replicate(const SessionContext&, const Request& r, const Params&) {
  plant::Trace trace;
  std::optional<std::vector<icm::CalibrationRecord>> cal;
  json overrides = json::object();
  bool wrapped = false;
  try {
    auto j = json::parse(r.body);
    if (j.is_object() && !j.contains("tick")) {
      wrapped = true;
      overrides = j;
    }
  } catch (const json::exception&) {
  }
  std::string text;
  if (wrapped) {
    if (overrides.contains("trace")) text = string_field(overrides, "trace");
    if (overrides.contains("calibration")) cal = parse_calibration(overrides["calibration"]);
  } else {
    text = r.body;
  }
  twin::TwinConfig config;
  {
    std::lock_guard lock(state_->mu);
    config = config_override(overrides, "config", state_->config);
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
      trace.assign(state_->recorded.begin(), state_->recorded.end());
    }
    if (!cal) cal = state_->twin.calibration;
  }
  if (trace.empty()) trace = plant::parse_trace(text);
  if (trace.empty()) throw Error(Errc::ValidationFailed, "empty trace");
  auto twin = run_twin();
  return store_run(twin::replicate(twin, trace, *cal, config));
}

Response Api::post_run_tune(const SessionContext&, const Request& r, const Params& p) {
  auto body = object_body(r);
  twin::RunReport previous;
  {
    std::lock_guard lock(state_->mu);
    auto it = state_->runs.find(p.at("id"));
    if (it == state_->runs.end()) throw Error(Errc::NotFound, "no run " + p.at("id"));
    previous = it->second;
  }
  json overrides = body.contains("config") ? body["config"] : body;
  auto next = twin::twin_config_from_json(overrides.dump(), previous.config);
  auto twin = run_twin();
  return store_run(twin::tune_and_rerun(twin, previous, next));
}

Response Api::get_runs(const SessionContext&, const Request&, const Params&) {
  std::lock_guard lock(state_->mu);
  json out = json::array();
  for (const auto& id : state_->run_order) {
    const auto& rep = state_->runs.at(id);
    out.push_back({{"run_id", rep.run_id},
                   {"parent_run_id", rep.parent_run_id ? json(*rep.parent_run_id) : json(nullptr)},
                   {"kind", std::string(twin::to_string(rep.kind))},
                   {"outcome", std::string(twin::to_string(rep.outcome))},
                   {"incidents", rep.incidents.size()}});
  }
  return reply({{"runs", out}});
}

Response Api::get_run(const SessionContext&, const Request&, const Params& p) {
  std::lock_guard lock(state_->mu);
  auto it = state_->runs.find(p.at("id"));
  if (it == state_->runs.end()) throw Error(Errc::NotFound, "no run " + p.at("id"));
  return {200, it->second.to_json(), "application/json"};
}

Response Api::get_run_log(const SessionContext&, const Request&, const Params& p) {
  std::lock_guard lock(state_->mu);
  auto it = state_->runs.find(p.at("id"));
  if (it == state_->runs.end()) throw Error(Errc::NotFound, "no run " + p.at("id"));
  return {200, it->second.run_log(), "text/plain"};
}

Response Api::get_run_trace(const SessionContext&, const Request&, const Params& p) {
  std::lock_guard lock(state_->mu);
  auto it = state_->runs.find(p.at("id"));
  if (it == state_->runs.end()) throw Error(Errc::NotFound, "no run " + p.at("id"));
  return {200, plant::export_trace(it->second.plant_trace), "application/x-ndjson"};
}

// ---------------------------------------------------------------------------
// Rules

Response Api::get_rules(const SessionContext&, const Request& r, const Params&) {
  std::shared_ptr<rules::RuleRegistry> reg;
  {
    std::lock_guard lock(state_->mu);
    reg = state_->rules;
  }
  bool active_only = r.query.contains("active") && r.query.at("active") != "0" && r.query.at("active") != "false";
  auto list = active_only ? reg->active() : reg->all();
  if (r.query.contains("association")) list = reg->find_by_association(r.query.at("association"));
  json out = json::array();
  for (const auto& rule : list) out.push_back(rule_json(rule));
  return reply({{"rules", out}});
}

Response Api::get_rule(const SessionContext&, const Request&, const Params& p) {
  std::shared_ptr<rules::RuleRegistry> reg;
  {
    std::lock_guard lock(state_->mu);
    reg = state_->rules;
  }
  auto rule = reg->get(p.at("id"));
  if (!rule) throw Error(Errc::UnknownRule, "no rule " + p.at("id"));
  json history = json::array();
  for (const auto& v : rules::rule_history(reg->ledger(), p.at("id"))) history.push_back(rule_json(v));
  return reply({{"rule", rule_json(*rule)}, {"history", history}});
}

Response Api::post_rule(const SessionContext& session, const Request& r, const Params&) {
  auto body = object_body(r);
  auto pred = rules::parse_predicate(string_field(body, "predicate"));
  std::shared_ptr<rules::RuleRegistry> reg;
  {
    std::lock_guard lock(state_->mu);
    reg = state_->rules;
  }
  auto id = reg->upsert_rule(session.principal, pred, string_set(body, "association"));
  return reply({{"rule", rule_json(*reg->get(id))}}, 201);
}

Response Api::put_rule(const SessionContext& session, const Request& r, const Params& p) {
  auto body = object_body(r);
  auto pred = rules::parse_predicate(string_field(body, "predicate"));
  std::shared_ptr<rules::RuleRegistry> reg;
  {
    std::lock_guard lock(state_->mu);
    reg = state_->rules;
  }
  auto existing = reg->get(p.at("id"));
  if (!existing) throw Error(Errc::UnknownRule, "no rule " + p.at("id"));
  auto assoc = body.contains("association") ? string_set(body, "association") : existing->association;
  auto id = reg->upsert_rule(session.principal, pred, assoc, p.at("id"));
  return reply({{"rule", rule_json(*reg->get(id))}});
}

Response Api::post_rule_deactivate(const SessionContext& session, const Request&, const Params& p) {
  std::shared_ptr<rules::RuleRegistry> reg;
  {
    std::lock_guard lock(state_->mu);
    reg = state_->rules;
  }
  auto id = reg->deactivate(session.principal, p.at("id"));
  return reply({{"rule", rule_json(*reg->get(id))}});
}

// ---------------------------------------------------------------------------
// Ledger

Response Api::get_ledger_query(const SessionContext&, const Request& r, const Params&) {
  ledger::QueryFilter f;
  auto q = [&](const char* key) -> std::optional<std::string> {
    auto it = r.query.find(key);
    if (it == r.query.end() || it->second.empty()) return std::nullopt;
    return it->second;
  };
  try {
    if (auto v = q("kind")) f.kind = ledger::entry_kind_from_string(*v);
    if (auto v = q("subject")) f.subject = *v;
    if (auto v = q("asset")) f.asset_id = *v;
    if (auto v = q("from")) f.from_time = parse_number(*v);
    if (auto v = q("to")) f.to_time = parse_number(*v);
  } catch (const Error& e) {
    throw Error(Errc::Malformed, std::string("query: ") + e.what());
  }
  auto led = ledger();
  json hits = json::array();
  for (const auto& h : led->query(f)) {
    auto env = h.entry.envelope();
    json item{{"block_index", h.block_index},
              {"timestamp", h.timestamp},
              {"author", h.author},
              {"kind", std::string(ledger::to_string(h.entry.kind))},
              {"subject", env.subject},
              {"assets", env.assets},
              {"payload_digest", to_hex(h.entry.payload_digest)}};
    auto body = h.entry.body();
    if (h.entry.kind == ledger::EntryKind::RuleEntry) {
      item["rule"] = rule_json(rules::decode_rule(body));
    } else if (h.entry.kind == ledger::EntryKind::IncidentEntry) {
      item["incident"] = json::parse(twin::to_json(twin::decode_incident(body)));
    } else {
      item["body_hex"] = to_hex(body);
    }
    hits.push_back(std::move(item));
  }
  return reply({{"count", hits.size()}, {"hits", hits}});
}

namespace {
json verify_json(const ledger::VerifyResult& v) {
  json j{{"intact", v.intact}, {"blocks_checked", v.blocks_checked}};
  if (!v.intact) {
    j["broken_at"] = v.broken_at;
    j["reason"] = v.reason ? std::string(ledger::to_string(*v.reason)) : std::string();
    j["detail"] = v.detail;
  }
  return j;
}
}  // namespace

Response Api::get_ledger_verify(const SessionContext&, const Request&, const Params&) {
  return reply(verify_json(ledger()->verify_chain()));
}

Response Api::post_ledger_verify_file(const SessionContext&, const Request& r, const Params&) {
  Bytes bytes(r.body.begin(), r.body.end());
  return reply(verify_json(ledger::verify_chain_file(bytes, *state_->keys)));
}

Response Api::get_ledger_export(const SessionContext&, const Request&, const Params&) {
  auto bytes = ledger()->export_chain();
  return {200, std::string(bytes.begin(), bytes.end()), "application/octet-stream"};
}

// ---------------------------------------------------------------------------
// Verification and stream

Response Api::post_verify(const SessionContext&, const Request& r, const Params&) {
  auto body = object_body(r);
  std::string which = body.contains("property") ? string_field(body, "property") : "all";
  auto k = int_field(body, "k", 50);
  verify::ExploreModel model;
  twin::TwinConfig property_config;
  {
    std::lock_guard lock(state_->mu);
    model.config = config_override(body, "config", state_->config);
    model.plant = state_->twin.plant_config;
    property_config = config_override(body, "property_config", state_->config);
  }
  verify::ExploreOptions options;
  options.grid_points = static_cast<int>(int_field(body, "grid_points", options.grid_points));
  options.max_states = static_cast<std::uint64_t>(
      int_field(body, "max_states", static_cast<std::int64_t>(options.max_states)));
  std::vector<verify::PropertyId> props;
  if (which == "all") {
    props = {verify::PropertyId::P1_Time, verify::PropertyId::P2_Temperature, verify::PropertyId::P3_Velocity};
  } else {
    props = {verify::property_from_string(which)};
  }
  json verdicts = json::array();
  bool any_sat = false;
  for (auto id : props) {
    auto v = verify::bounded_explore(model, k, verify::PropertySpec::from_config(id, property_config), options);
    any_sat = any_sat || v.sat();
    verdicts.push_back(json::parse(verify::to_json(v)));
  }
  return reply({{"k", k}, {"violations", any_sat}, {"verdicts", verdicts}});
}

Response Api::get_stream(const SessionContext&, const Request& r, const Params&) {
  std::uint64_t after = 0;
  std::int64_t wait_ms = 0;
  std::size_t limit = 1000;
  try {
    if (r.query.contains("after")) after = static_cast<std::uint64_t>(parse_number(r.query.at("after")));
    if (r.query.contains("wait_ms")) wait_ms = static_cast<std::int64_t>(parse_number(r.query.at("wait_ms")));
    if (r.query.contains("limit")) limit = static_cast<std::size_t>(parse_number(r.query.at("limit")));
  } catch (const Error& e) {
    throw Error(Errc::Malformed, std::string("query: ") + e.what());
  }
  wait_ms = std::clamp<std::int64_t>(wait_ms, 0, 30000);
  limit = std::clamp<std::size_t>(limit, 1, 10000);
  auto msgs = stream_.since(after, limit, std::chrono::milliseconds(wait_ms));
  json out = json::array();
  for (const auto& m : msgs) out.push_back({{"seq", m.seq}, {"type", m.type}, {"payload", json::parse(m.payload)}});
  return reply({{"messages", out},
                {"last_seq", stream_.last_seq()},
                {"dropped_telemetry", stream_.dropped_telemetry()}});
}

}  // namespace tts::service
