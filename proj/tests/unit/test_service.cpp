// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "tts/common/error.hpp"
#include "tts/plant/trace.hpp"
#include "tts/service/service.hpp"

using namespace tts;
using namespace tts::service;
using json = nlohmann::json;

namespace {

std::string role_token(Role r) { return "token-" + std::string(to_string(r)); }

ServiceConfig all_roles_config() {
  ServiceConfig c;
  c.logical_clock = true;
  c.tokens.clear();
  for (auto r : kAllRoles) c.tokens.push_back({role_token(r), {"e-" + std::string(to_string(r)), {r}}});
  c.tokens.push_back({"analyst-token", {"analyst", {Role::SecurityAnalyst}}});
  c.tokens.push_back({"operator-token", {"operator", {Role::PlantOperator}}});
  return c;
}

struct Client {
  Api& api;
  std::string session;

  Client(Api& a, const std::string& token) : api(a) {
    auto r = api.handle({"POST", "/v1/sessions", {}, json{{"token", token}}.dump(), ""});
    REQUIRE(r.status == 201);
    session = json::parse(r.body)["session_id"];
  }

  Response call(const std::string& method, const std::string& path, const std::string& body = "",
                std::map<std::string, std::string> query = {}) {
    return api.handle({method, path, std::move(query), body, session});
  }
  json get(const std::string& path, std::map<std::string, std::string> query = {}) {
    auto r = call("GET", path, "", std::move(query));
    REQUIRE_MESSAGE(r.status == 200, r.body);
    return json::parse(r.body);
  }
};

std::string fill(std::string pattern) {
  auto pos = pattern.find(":id");
  if (pos != std::string::npos) pattern.replace(pos, 3, "R-1");
  return pattern;
}

plant::Trace fault_free_trace() {
  auto cfg = plant::PlantConfig::reference();
  plant::Plant p(cfg);
  auto schedule = plant::reference_schedule(cfg, 2.0, 8.0, 3.0, 30, 500);
  return plant::simulate(p, p.initial_state(), schedule, {}, 500).trace;
}

std::vector<json> stream_all(Client& c) {
  std::vector<json> out;
  std::uint64_t after = 0;
  while (true) {
    auto page = c.get("/v1/stream", {{"after", std::to_string(after)}, {"limit", "500"}});
    if (page["messages"].empty()) break;
    for (auto& m : page["messages"]) {
      after = m["seq"];
      out.push_back(m);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("every endpoint enforces the role matrix") {
  Api api(all_roles_config());
  for (auto role : kAllRoles) {
    Client c(api, role_token(role));
    Principal p{"e", {role}};
    for (const auto& ep : endpoint_table()) {
      if (ep.open) continue;
      std::string body = ep.pattern == "/v1/verify" ? R"({"k":0})" : "{}";
      auto r = c.call(ep.method, fill(ep.pattern), body);
      CAPTURE(ep.method);
      CAPTURE(ep.pattern);
      CAPTURE(to_string(role));
      CAPTURE(r.body);
      bool allowed = !ep.action || permits(p, *ep.action);
      if (allowed) {
        CHECK(r.status != 403);
        CHECK(r.status != 401);
      } else {
        CHECK(r.status == 403);
      }
    }
  }
}

TEST_CASE("state-mutating endpoints name an action") {
  for (const auto& ep : endpoint_table()) {
    if (ep.method == "GET" || ep.open || ep.pattern == "/v1/spec/validate") continue;
    CAPTURE(ep.pattern);
    CHECK(ep.action.has_value());
  }
}

TEST_CASE("requests without a valid session are rejected") {
  Api api(all_roles_config());
  for (const auto& ep : endpoint_table()) {
    auto r = api.handle({ep.method, fill(ep.pattern), {}, "{}", "bogus"});
    CAPTURE(ep.pattern);
    if (ep.open) {
      CHECK(r.status != 401);
    } else {
      CHECK(r.status == 401);
    }
  }
  CHECK(api.handle({"POST", "/v1/sessions", {}, R"({"token":"nope"})", ""}).status == 401);
  CHECK(api.handle({"GET", "/v1/nothing", {}, "", ""}).status == 404);
  CHECK(api.handle({"DELETE", "/v1/rules/R-1", {}, "", ""}).status == 405);
}

TEST_CASE("sessions expire") {
  double now = 100.0;
  auto cfg = all_roles_config();
  cfg.session_ttl = 60;
  Api api(cfg, [&] { return now; });
  Client c(api, "analyst-token");
  CHECK(c.call("GET", "/v1/rules").status == 200);
  now = 159.0;
  CHECK(c.call("GET", "/v1/rules").status == 200);
  now = 160.0;
  auto r = c.call("GET", "/v1/rules");
  CHECK(r.status == 401);
  CHECK(json::parse(r.body)["error"]["message"].get<std::string>().find("session expired") != std::string::npos);
  now = 10.0;
  CHECK(c.call("GET", "/v1/rules").status == 401);
}

TEST_CASE("operator setpoint is echoed in the next telemetry tick") {
  Api api(all_roles_config());
  Client op(api, "operator-token");
  REQUIRE(op.call("POST", "/v1/plant/start").status == 200);
  auto r = op.call("POST", "/v1/plant/setpoint", R"({"name":"V","value":2.5})");
  REQUIRE_MESSAGE(r.status == 200, r.body);
  auto before = api.stream().last_seq();
  REQUIRE(op.call("POST", "/v1/plant/step", R"({"ticks":1})").status == 200);
  auto msgs = api.stream().since(before);
  REQUIRE(msgs.size() == 1);
  auto tick = json::parse(msgs[0].payload);
  CHECK(msgs[0].type == "telemetry");
  CHECK(tick["record"]["velocity"] == 2.5);
  CHECK(tick["setpoints"]["V"]["value"] == 2.5);
  CHECK(tick["setpoints"]["V"]["issued_by"] == "operator");
  auto t = op.get("/v1/plant/telemetry");
  CHECK(t["record"]["velocity"] == 2.5);
}

TEST_CASE("out-of-bounds setpoint is refused and recorded against the caller") {
  Api api(all_roles_config());
  Client op(api, "operator-token");
  Client an(api, "analyst-token");
  auto blocks = api.ledger()->block_count();
  auto r = op.call("POST", "/v1/plant/setpoint", R"({"name":"C","value":42})");
  CHECK(r.status == 422);
  auto err = json::parse(r.body)["error"];
  CHECK(err["code"] == "SetpointOutOfBounds");
  CHECK(api.ledger()->block_count() == blocks + 1);
  auto hits = an.get("/v1/ledger/query", {{"kind", "IncidentEntry"}, {"asset", "operator"}});
  REQUIRE(hits["count"] == 1);
  CHECK(hits["hits"][0]["incident"]["kind"] == "SetpointOutOfBounds");
  CHECK(hits["hits"][0]["incident"]["violated_rule"]["rule_id"] == "config:tau_c");
  CHECK(op.call("POST", "/v1/plant/setpoint", R"({"name":"X","value":1})").status == 400);
  CHECK(op.call("POST", "/v1/plant/setpoint", R"({"name":"V"})").status == 400);
}

TEST_CASE("operator rule upsert is unauthorized and leaves the chain unchanged") {
  Api api(all_roles_config());
  Client op(api, "operator-token");
  auto blocks = api.ledger()->block_count();
  auto r = op.call("POST", "/v1/rules", R"j({"predicate":"(in-bounds sensor1 0 9)","association":["sensor1"]})j");
  CHECK(r.status == 403);
  CHECK(json::parse(r.body)["error"]["code"] == "Unauthorized");
  CHECK(op.call("PUT", "/v1/rules/R-1", R"j({"predicate":"(const pass)"})j").status == 403);
  CHECK(op.call("POST", "/v1/rules/R-1/deactivate").status == 403);
  CHECK(api.ledger()->block_count() == blocks);
}

TEST_CASE("analyst rule create, update and deactivate through the api") {
  Api api(all_roles_config());
  Client an(api, "analyst-token");
  auto r = an.call("POST", "/v1/rules", R"j({"predicate":"(in-bounds sensor5 20 80)","association":["sensor5"]})j");
  REQUIRE_MESSAGE(r.status == 201, r.body);
  std::string id = json::parse(r.body)["rule"]["rule_id"];
  r = an.call("PUT", "/v1/rules/" + id, R"j({"predicate":"(in-bounds sensor5 20 85)"})j");
  REQUIRE_MESSAGE(r.status == 200, r.body);
  CHECK(json::parse(r.body)["rule"]["version"] == 2);
  CHECK(json::parse(r.body)["rule"]["association"] == json::array({"sensor5"}));
  auto detail = an.get("/v1/rules/" + id);
  REQUIRE(detail["history"].size() == 2);
  CHECK(detail["history"][0]["version"] == 1);
  CHECK(detail["history"][1]["version"] == 2);
  REQUIRE(an.call("POST", "/v1/rules/" + id + "/deactivate").status == 200);
  CHECK(an.get("/v1/rules/" + id)["rule"]["active"] == false);
  CHECK(an.call("GET", "/v1/rules/R-999").status == 404);
  CHECK(an.call("POST", "/v1/rules", R"j({"predicate":"(in-bounds"})j").status == 400);
  CHECK(an.call("POST", "/v1/rules", R"j({"predicate":"(in-bounds sensor9 0 1)"})j").status == 400);
}

TEST_CASE("replication of an uploaded fault-free trace yields no incidents") {
  Api api(all_roles_config());
  Client an(api, "analyst-token");
  auto r = an.call("POST", "/v1/runs/replicate", plant::export_trace(fault_free_trace()));
  REQUIRE_MESSAGE(r.status == 201, r.body);
  auto rep = json::parse(r.body);
  CHECK(rep["incidents"].empty());
  CHECK(rep["mode"] == "replication");

  plant::FaultInjection f{plant::FaultKind::SensorOffset, "sensor5", 100.0, 217, 500};
  auto cfg = plant::PlantConfig::reference();
  plant::Plant p(cfg);
  auto faulty = plant::simulate(p, p.initial_state(), plant::reference_schedule(cfg, 2.0, 8.0, 3.0, 30, 500),
                                std::vector{f}, 500)
                    .trace;
  json wrapped{{"trace", plant::export_trace(faulty)}};
  r = an.call("POST", "/v1/runs/replicate", wrapped.dump());
  REQUIRE_MESSAGE(r.status == 201, r.body);
  rep = json::parse(r.body);
  REQUIRE(!rep["incidents"].empty());
  CHECK(rep["incidents"][0]["tick"].get<std::int64_t>() - 217 <= 1);
  CHECK(rep["incidents"][0]["action_taken"] == "calibration_service");

  CHECK(an.call("POST", "/v1/runs/replicate", "{\"tick\": oops").status == 400);
}

TEST_CASE("live plant trace can be replicated") {
  Api api(all_roles_config());
  Client sys(api, role_token(Role::System));
  Client an(api, "analyst-token");
  for (auto sp : {R"({"name":"V","value":2})", R"({"name":"C","value":8})", R"({"name":"P","value":3})"}) {
    REQUIRE(sys.call("POST", "/v1/plant/setpoint", sp).status == 200);
  }
  REQUIRE(sys.call("POST", "/v1/plant/load").status == 200);
  CHECK(sys.call("POST", "/v1/plant/load").status == 409);
  REQUIRE(sys.call("POST", "/v1/plant/start", R"({"load_every":30})").status == 200);
  REQUIRE(sys.call("POST", "/v1/plant/step", R"({"ticks":300})").status == 200);
  auto trace = plant::parse_trace(sys.call("GET", "/v1/plant/trace").body);
  CHECK(trace.size() == 300);
  // The live controller welds each chassis as it reaches Station B.
  CHECK(trace.back().arm.objects_welded >= 3);
  double peak = 0;
  for (const auto& rec : trace) peak = std::max(peak, rec.arm.object_temp);
  CHECK(peak == doctest::Approx(25 + 0.5 * 8 * 3 * 3).epsilon(0.02));
  auto r = an.call("POST", "/v1/runs/replicate");
  REQUIRE_MESSAGE(r.status == 201, r.body);
  CHECK(json::parse(r.body)["incidents"].empty());
}

TEST_CASE("stream sequence numbers are ordered and incidents gap-free per run") {
  auto cfg = all_roles_config();
  cfg.telemetry_buffer = 4;
  Api api(cfg);
  Client sys(api, role_token(Role::System));
  Client an(api, "analyst-token");
  REQUIRE(sys.call("POST", "/v1/plant/step", R"({"ticks":20})").status == 200);
  // Breaches on every weld: tau_t far below the weld peak.
  auto r = an.call("POST", "/v1/runs/arm",
                   R"({"current":8,"pressure":3,"objects":4,"config":{"tau_t":[20,40]}})");
  REQUIRE_MESSAGE(r.status == 201, r.body);
  REQUIRE(sys.call("POST", "/v1/plant/setpoint", R"({"name":"P","value":99})").status == 422);
  REQUIRE(sys.call("POST", "/v1/plant/setpoint", R"({"name":"V","value":0})").status == 422);
  REQUIRE(sys.call("POST", "/v1/plant/step", R"({"ticks":20})").status == 200);

  auto msgs = stream_all(an);
  std::uint64_t last = 0;
  std::map<std::string, std::int64_t> per_run;
  std::size_t telemetry = 0;
  for (const auto& m : msgs) {
    CHECK(m["seq"].get<std::uint64_t>() > last);
    last = m["seq"];
    if (m["type"] == "incident") {
      std::string run = m["payload"]["run_id"];
      CHECK(m["payload"]["run_seq"].get<std::int64_t>() == per_run[run] + 1);
      per_run[run] = m["payload"]["run_seq"];
    }
    if (m["type"] == "telemetry") ++telemetry;
  }
  CHECK(telemetry == 4);
  CHECK(api.stream().dropped_telemetry() == 36);
  CHECK(per_run["LIVE"] == 2);
  auto arm_incidents = json::parse(r.body)["incidents"].size();
  CHECK(arm_incidents >= 1);
  CHECK(per_run[json::parse(r.body)["run_id"]] == static_cast<std::int64_t>(arm_incidents));
}

TEST_CASE("stream waits for new messages") {
  Api api(all_roles_config());
  Client sys(api, role_token(Role::System));
  auto start = api.stream().last_seq();
  std::thread t([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    api.stream().publish("run", "{}");
  });
  auto page = sys.get("/v1/stream", {{"after", std::to_string(start)}, {"wait_ms", "5000"}});
  t.join();
  CHECK(page["messages"].size() == 1);
}

TEST_CASE("fault injection is analyst-only and tamper attempts are recorded") {
  Api api(all_roles_config());
  Client an(api, "analyst-token");
  Client op(api, "operator-token");
  CHECK(op.call("POST", "/v1/plant/fault", R"({"kind":"SensorOffset","target":"sensor5","magnitude":5})").status ==
        403);
  auto rule_before = an.get("/v1/rules/R-1")["rule"];
  auto r = an.call("POST", "/v1/plant/fault", R"({"kind":"RuleTamperAttempt","target":"operator"})");
  REQUIRE_MESSAGE(r.status == 200, r.body);
  auto body = json::parse(r.body);
  CHECK(body["outcome"] == "Unauthorized");
  CHECK(body["incident"]["violated_rule"]["rule_id"] == "rbac:WriteRule");
  CHECK(an.get("/v1/rules/R-1")["rule"] == rule_before);

  r = an.call("POST", "/v1/plant/fault", R"({"kind":"SensorOffset","target":"sensor5","magnitude":5})");
  REQUIRE_MESSAGE(r.status == 201, r.body);
  CHECK(an.call("POST", "/v1/plant/fault", R"({"kind":"Meteor","target":"sensor5"})").status != 201);
}

TEST_CASE("sim runs, logs and tuning through the api") {
  Api api(all_roles_config());
  Client an(api, "analyst-token");
  auto r = an.call("POST", "/v1/runs/arm", R"({"current":8,"pressure":3,"objects":2,"config":{"tau_t":[20,50]}})");
  REQUIRE(r.status == 201);
  auto rep = json::parse(r.body);
  CHECK(rep["outcome"] == "incident");
  std::string id = rep["run_id"];
  auto log = an.call("GET", "/v1/runs/" + id + "/log");
  CHECK(log.content_type == "text/plain");
  CHECK(log.body.find("RUN_START") != std::string::npos);
  r = an.call("POST", "/v1/runs/" + id + "/tune", R"({"tau_t":[20,90]})");
  REQUIRE_MESSAGE(r.status == 201, r.body);
  auto tuned = json::parse(r.body);
  CHECK(tuned["parent_run_id"] == id);
  CHECK(tuned["outcome"] == "optimal");
  CHECK(an.call("POST", "/v1/runs/" + std::string(tuned["run_id"]) + "/tune", "{}").status == 409);
  CHECK(an.get("/v1/runs")["runs"].size() == 2);
  CHECK(an.call("GET", "/v1/runs/RUN-999").status == 404);

  r = an.call("POST", "/v1/runs/conveyor", R"({"velocity":2,"load_every":30,"ticks":200})");
  REQUIRE_MESSAGE(r.status == 201, r.body);
  CHECK(json::parse(r.body)["o_count"].get<int>() > 0);
  CHECK(an.call("POST", "/v1/runs/conveyor", R"({"velocity":2,"config":{"tau_v":[5,1]}})").status == 422);
}

TEST_CASE("config endpoint merges and validates") {
  Api api(all_roles_config());
  Client an(api, "analyst-token");
  Client au(api, "token-Auditor");
  auto r = an.call("PUT", "/v1/config", R"({"tau_t":[20,70]})");
  REQUIRE(r.status == 200);
  CHECK(json::parse(r.body)["tau_t"] == json::array({20.0, 70.0}));
  CHECK(au.get("/v1/config")["tau_t"] == json::array({20.0, 70.0}));
  CHECK(an.call("PUT", "/v1/config", R"({"bogus":1})").status == 422);
  CHECK(au.call("PUT", "/v1/config", R"({"d":2})").status == 403);
}

TEST_CASE("spec validation, upload and calibration") {
  Api api(all_roles_config());
  Client an(api, "analyst-token");
  auto spec = an.call("GET", "/v1/spec").body;
  auto v = json::parse(an.call("POST", "/v1/spec/validate", spec).body);
  CHECK(v["ok"] == true);

  auto broken = json::parse(spec);
  broken["topology"].push_back({{"from", "PLC9"}, {"to", "PLC1"}});
  v = json::parse(an.call("POST", "/v1/spec/validate", broken.dump()).body);
  CHECK(v["ok"] == false);
  CHECK(an.call("POST", "/v1/spec", broken.dump()).status == 422);
  CHECK(an.call("POST", "/v1/spec/validate", "{\"devices\":").status == 400);

  auto r = an.call("POST", "/v1/spec", spec);
  REQUIRE_MESSAGE(r.status == 201, r.body);
  CHECK(an.get("/v1/endpoints")["endpoints"].size() == 9);

  r = an.call("POST", "/v1/calibration", json::parse(spec)["calibration"].dump());
  REQUIRE_MESSAGE(r.status == 201, r.body);
  auto cal = json::parse(spec)["calibration"];
  cal[0]["tau_min"] = 9;
  cal[0]["tau_max"] = 1;
  CHECK(an.call("POST", "/v1/calibration", cal.dump()).status == 422);
  CHECK(an.get("/v1/ledger/verify")["intact"] == true);
}

TEST_CASE("ledger export, tamper detection and persistence") {
  auto dir = std::filesystem::temp_directory_path() / ("tts-svc-" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  auto cfg = all_roles_config();
  cfg.ledger_file = (dir / "chain.bin").string();
  std::filesystem::remove(cfg.ledger_file);
  std::size_t blocks = 0;
  std::string exported;
  {
    Api api(cfg);
    Client an(api, "analyst-token");
    REQUIRE(an.call("POST", "/v1/rules", R"j({"predicate":"(const pass)","association":["PLC1"]})j").status == 201);
    blocks = api.ledger()->block_count();
    auto ex = an.call("GET", "/v1/ledger/export");
    CHECK(ex.content_type == "application/octet-stream");
    exported = ex.body;
    auto ok = json::parse(an.call("POST", "/v1/ledger/verify-file", exported).body);
    CHECK(ok["intact"] == true);
    auto bad = exported;
    bad[bad.size() / 2] = static_cast<char>(bad[bad.size() / 2] ^ 0x01);
    auto res = json::parse(an.call("POST", "/v1/ledger/verify-file", bad).body);
    CHECK(res["intact"] == false);
    CHECK(res.contains("broken_at"));
  }
  {
    Api reopened(cfg);
    CHECK(reopened.ledger()->block_count() == blocks);
    Client an(reopened, "analyst-token");
    CHECK(an.get("/v1/rules")["rules"].size() == 6);
  }
  {
    std::ofstream out(cfg.ledger_file, std::ios::binary | std::ios::trunc);
    auto bad = exported;
    bad[bad.size() - 40] = static_cast<char>(bad[bad.size() - 40] ^ 0x10);
    out << bad;
  }
  CHECK_THROWS_AS(Api{cfg}, Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("verification endpoint reports verdicts") {
  Api api(all_roles_config());
  Client au(api, "token-Auditor");
  auto r = au.call("POST", "/v1/verify", R"({"property":"P2","k":20,"grid_points":3,"config":{"k_heat":5}})");
  REQUIRE_MESSAGE(r.status == 200, r.body);
  auto body = json::parse(r.body);
  CHECK(body["violations"] == true);
  CHECK(body["verdicts"][0]["result"] == "sat");
  r = au.call("POST", "/v1/verify", R"({"property":"P1","k":20,"grid_points":3})");
  CHECK(json::parse(r.body)["verdicts"][0]["result"] == "unsat");
  CHECK(au.call("POST", "/v1/verify", R"({"property":"P9"})").status == 400);
  CHECK(au.call("POST", "/v1/verify", R"({"property":"P1","k":50,"max_states":10})").status == 422);
}

TEST_CASE("config precedence: flags over environment over file over defaults") {
  std::map<std::string, std::string> env_vars{{"TTS_PORT", "9002"}, {"TTS_HOST", "0.0.0.0"}};
  EnvLookup env = [&](const std::string& k) -> std::optional<std::string> {
    auto it = env_vars.find(k);
    if (it == env_vars.end()) return std::nullopt;
    return it->second;
  };
  std::string file = R"({"port": 9001, "session_ttl": 30, "step_rate": 5})";

  auto c = resolve_config(file, env, {{"port", "9003"}});
  CHECK(c.port == 9003);
  CHECK(c.host == "0.0.0.0");
  CHECK(c.session_ttl == 30);
  CHECK(c.step_rate == 5);
  CHECK(c.telemetry_buffer == 1024);

  CHECK(resolve_config(file, env, {}).port == 9002);
  CHECK(resolve_config(file, {}, {}).port == 9001);
  CHECK(resolve_config("", {}, {}).port == 8080);

  env_vars["TTS_TOKENS"] = "t1=alice:SecurityAnalyst+Auditor;t2=bob:PlantOperator";
  c = resolve_config("", env, {});
  REQUIRE(c.tokens.size() == 2);
  CHECK(c.tokens[0].principal.entity_id == "alice");
  CHECK(c.tokens[0].principal.roles == std::set<Role>{Role::SecurityAnalyst, Role::Auditor});

  CHECK_THROWS_AS(resolve_config(R"({"port": "x"})", {}, {}), Error);
  CHECK_THROWS_AS(resolve_config(R"({"colour": 1})", {}, {}), Error);
  CHECK_THROWS_AS(resolve_config("", {}, {{"port", "70000"}}), Error);
  CHECK_THROWS_AS(resolve_config("", {}, {{"tokens", "t1=alice:Wizard"}}), Error);
  env_vars["TTS_STEP_RATE"] = "-1";
  CHECK_THROWS_AS(resolve_config("", env, {}), Error);
}

TEST_CASE("error codes map onto http statuses") {
  CHECK(http_status(Errc::Malformed) == 400);
  CHECK(http_status(Errc::Unauthorized) == 403);
  CHECK(http_status(Errc::NotFound) == 404);
  CHECK(http_status(Errc::UnknownRule) == 404);
  CHECK(http_status(Errc::NotTunable) == 409);
  CHECK(http_status(Errc::ValidationFailed) == 422);
  CHECK(http_status(Errc::LedgerUnavailable) == 503);
}

TEST_CASE("http adapter serves the api") {
  auto cfg = all_roles_config();
  cfg.port = 0;
  Api api(cfg);
  std::atomic<bool> stop{false};
  std::atomic<int> port{0};
  std::thread server([&] { serve(api, [&] { return stop.load(); }, [&](int p) { port = p; }); });
  for (int i = 0; i < 200 && port == 0; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
  REQUIRE(port > 0);

  httplib::Client cli("127.0.0.1", port);
  auto health = cli.Get("/v1/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  auto s = cli.Post("/v1/sessions", R"({"token":"operator-token"})", "application/json");
  REQUIRE(s);
  REQUIRE(s->status == 201);
  std::string sid = json::parse(s->body)["session_id"];
  httplib::Headers auth{{"Authorization", "Bearer " + sid}};
  auto rules = cli.Get("/v1/rules", auth);
  REQUIRE(rules);
  CHECK(rules->status == 200);
  CHECK(json::parse(rules->body)["rules"].size() == 5);
  auto denied = cli.Get("/v1/ledger/verify", auth);
  REQUIRE(denied);
  CHECK(denied->status == 403);

  // The background ticker advances a running plant.
  REQUIRE(cli.Post("/v1/plant/step-rate", auth, R"({"rate":200})", "application/json")->status == 200);
  REQUIRE(cli.Post("/v1/plant/start", auth, "", "application/json")->status == 200);
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  auto t = cli.Get("/v1/plant/telemetry", auth);
  REQUIRE(t);
  CHECK(json::parse(t->body)["tick"].get<int>() > 0);

  stop = true;
  server.join();
}
