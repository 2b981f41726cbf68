// SPDX-License-Identifier: Apache-2.0
#pragma once

// Control plane. Api::handle() is transport independent: the HTTP adapter in
// serve() and the CLI both drive it, so every CLI subcommand is an API call.
// docs/api.md lists the endpoints, status codes and stream messages.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "tts/common/access.hpp"
#include "tts/common/error.hpp"
#include "tts/icm/spec_file.hpp"
#include "tts/ledger/ledger.hpp"
#include "tts/rules/rule.hpp"
#include "tts/twin/twin.hpp"

namespace tts::service {

// ---------------------------------------------------------------------------
// Configuration: flags > TTS_* environment > config file > defaults.

struct TokenGrant {
  std::string token;
  Principal principal;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string key_seed = "tts-dev-seed";
  double session_ttl = 3600.0;  // seconds
  std::string ledger_file;      // empty: in-memory only
  std::string spec_file;        // empty: reference scenario
  std::size_t telemetry_buffer = 1024;
  double step_rate = 10.0;  // ticks per second while the plant runs
  std::uint64_t seed = 0;
  bool logical_clock = false;
  std::vector<TokenGrant> tokens = default_tokens();

  static std::vector<TokenGrant> default_tokens();
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// The process environment.
EnvLookup process_env();

/// Applies the config file (JSON object, may be empty), then TTS_<KEY>
/// variables, then `flags` (keyed like the file) on top of the defaults.
/// Throws Error(ConfigInvalid) naming the source and key.
ServiceConfig resolve_config(std::string_view file_text, const EnvLookup& env,
                             const std::map<std::string, std::string>& flags);

/// "token=entity:Role+Role;token2=..." as used by TTS_TOKENS.
std::vector<TokenGrant> parse_token_list(std::string_view text);

// ---------------------------------------------------------------------------
// Transport-neutral request/response.

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
  std::string bearer;  // session id from "Authorization: Bearer <id>"
};

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

int http_status(Errc code) noexcept;

/// The route table with the action each route needs. Routes without an
/// action are open to every authenticated session; `open` routes need no
/// session at all.
struct EndpointSpec {
  std::string method;
  std::string pattern;  // ":name" segments capture
  std::optional<Action> action;
  bool open = false;
};

const std::vector<EndpointSpec>& endpoint_table();

struct SessionContext {
  Principal principal;
  std::string session_id;
  double issued_at = 0.0;
  double expiry = 0.0;
};

// ---------------------------------------------------------------------------
// Ordered stream. Telemetry is dropped oldest-first past the buffer size;
// incidents and run events are never dropped.

struct StreamMessage {
  std::uint64_t seq = 0;
  std::string type;  // telemetry, incident, run
  std::string payload;  // JSON
};

class EventStream {
 public:
  explicit EventStream(std::size_t telemetry_capacity) : capacity_(telemetry_capacity) {}

  std::uint64_t publish(std::string type, std::string payload);
  /// Messages with seq > after, in order, at most `limit`. Blocks up to
  /// `wait` when nothing newer exists yet.
  std::vector<StreamMessage> since(std::uint64_t after, std::size_t limit = 1000,
                                   std::chrono::milliseconds wait = std::chrono::milliseconds(0)) const;
  std::uint64_t last_seq() const;
  std::uint64_t dropped_telemetry() const;

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::uint64_t seq_ = 0;
  std::uint64_t dropped_ = 0;
  std::deque<StreamMessage> telemetry_;
  std::deque<StreamMessage> events_;
};

// ---------------------------------------------------------------------------

class Api {
 public:
  using Clock = std::function<double()>;

  explicit Api(ServiceConfig config, Clock clock = {});
  ~Api();
  Api(const Api&) = delete;
  Api& operator=(const Api&) = delete;

  Response handle(const Request& request);

  /// Opens a session for a configured token. Throws Error(Unauthorized).
  SessionContext open_session(const std::string& token);

  /// Advances the live plant when it is running; used by the server ticker.
  void tick_if_running();
  double step_rate() const;

  const ServiceConfig& config() const { return config_; }
  EventStream& stream() { return stream_; }
  std::shared_ptr<ledger::Ledger> ledger() const;

 private:
  struct State;
  using Params = std::map<std::string, std::string>;
  using Handler = Response (Api::*)(const SessionContext&, const Request&, const Params&);
  struct Route {
    EndpointSpec spec;
    Handler handler;
  };

  static const std::vector<Route>& routes();
  friend const std::vector<EndpointSpec>& endpoint_table();

  Response get_health(const SessionContext&, const Request&, const Params&);
  Response post_session(const SessionContext&, const Request&, const Params&);
  Response get_spec(const SessionContext&, const Request&, const Params&);
  Response post_spec(const SessionContext&, const Request&, const Params&);
  Response post_spec_validate(const SessionContext&, const Request&, const Params&);
  Response post_calibration(const SessionContext&, const Request&, const Params&);
  Response get_config(const SessionContext&, const Request&, const Params&);
  Response put_config(const SessionContext&, const Request&, const Params&);
  Response post_plant_start(const SessionContext&, const Request&, const Params&);
  Response post_plant_stop(const SessionContext&, const Request&, const Params&);
  Response post_plant_step_rate(const SessionContext&, const Request&, const Params&);
  Response post_plant_step(const SessionContext&, const Request&, const Params&);
  Response post_plant_setpoint(const SessionContext&, const Request&, const Params&);
  Response post_plant_load(const SessionContext&, const Request&, const Params&);
  Response post_plant_fault(const SessionContext&, const Request&, const Params&);
  Response get_plant_telemetry(const SessionContext&, const Request&, const Params&);
  Response get_plant_trace(const SessionContext&, const Request&, const Params&);
  Response get_endpoints(const SessionContext&, const Request&, const Params&);
  Response post_run_conveyor(const SessionContext&, const Request&, const Params&);
  Response post_run_arm(const SessionContext&, const Request&, const Params&);
  Response post_run_replicate(const SessionContext&, const Request&, const Params&);
  Response post_run_tune(const SessionContext&, const Request&, const Params&);
  Response get_runs(const SessionContext&, const Request&, const Params&);
  Response get_run(const SessionContext&, const Request&, const Params&);
  Response get_run_log(const SessionContext&, const Request&, const Params&);
  Response get_run_trace(const SessionContext&, const Request&, const Params&);
  Response get_rules(const SessionContext&, const Request&, const Params&);
  Response get_rule(const SessionContext&, const Request&, const Params&);
  Response post_rule(const SessionContext&, const Request&, const Params&);
  Response put_rule(const SessionContext&, const Request&, const Params&);
  Response post_rule_deactivate(const SessionContext&, const Request&, const Params&);
  Response get_ledger_query(const SessionContext&, const Request&, const Params&);
  Response get_ledger_verify(const SessionContext&, const Request&, const Params&);
  Response post_ledger_verify_file(const SessionContext&, const Request&, const Params&);
  Response get_ledger_export(const SessionContext&, const Request&, const Params&);
  Response post_verify(const SessionContext&, const Request&, const Params&);
  Response get_stream(const SessionContext&, const Request&, const Params&);

  SessionContext authenticate(const Request& request);
  Response store_run(twin::RunReport report);
  twin::TwinInstance run_twin();
  void publish_incident(const twin::Incident& incident, const std::string& run_id);
  void step_locked(std::int64_t ticks);
  void reset_plant_locked();
  void persist_locked();

  ServiceConfig config_;
  Clock clock_;
  EventStream stream_;
  std::unique_ptr<State> state_;
};

/// Blocks serving HTTP on config.host:config.port until `should_stop`
/// returns true (polled every 100 ms). Port 0 binds any free port;
/// `on_listening` receives the bound port. Throws Error(Io) when binding fails.
void serve(Api& api, const std::function<bool()>& should_stop = {},
           const std::function<void(int)>& on_listening = {});

}  // namespace tts::service
