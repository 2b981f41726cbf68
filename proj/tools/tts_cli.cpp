// SPDX-License-Identifier: Apache-2.0
// tts: headless client. Every subcommand is a sequence of API calls made
// in-process against a fresh service instance; `serve` exposes the same API
// over HTTP. Exit codes are listed in docs/cli.md.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tts/common/error.hpp"
#include "tts/service/service.hpp"

using namespace tts;
using namespace tts::service;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

enum Exit : int {
  kOk = 0,
  kFindings = 1,
  kUsage = 2,
  kValidation = 3,
  kLedgerBroken = 4,
  kIo = 5,
  kBudget = 6,
  kInternal = 7,
  kDenied = 8,
};

constexpr const char* kLocalToken = "cli-local";

/// Carries an exit code out of nested helpers.
struct Fail {
  int code;
  std::string message;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Fail{kIo, "cannot read " + path};
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Fail{kIo, "cannot write " + path.string()};
  out << content;
  if (!out) throw Fail{kIo, "cannot write " + path.string()};
}

int exit_for(const std::string& code) {
  if (code == "BudgetExceeded") return kBudget;
  if (code == "Io") return kIo;
  if (code == "Unauthorized" || code == "Unauthenticated") return kDenied;
  if (code == "LedgerUnavailable") return kLedgerBroken;
  if (code == "Internal") return kInternal;
  return kValidation;
}

struct Globals {
  std::string config_file;
  std::string spec_file;
  std::string ledger_file;
  std::string key_seed;
  std::string token;
  std::int64_t seed = -1;
  bool json_out = false;
};

/// In-process session against a fresh Api.
class Session {
 public:
  Session(const Globals& g, bool logical) {
    std::map<std::string, std::string> flags;
    if (!g.spec_file.empty()) flags["spec_file"] = g.spec_file;
    if (!g.ledger_file.empty()) flags["ledger_file"] = g.ledger_file;
    if (!g.key_seed.empty()) flags["key_seed"] = g.key_seed;
    if (g.seed >= 0) flags["seed"] = std::to_string(g.seed);
    if (logical) flags["logical_clock"] = "true";
    auto cfg = resolve_config(g.config_file.empty() ? std::string() : read_file(g.config_file), process_env(), flags);
    cfg.tokens.push_back({kLocalToken, {"cli", {Role::SecurityAnalyst, Role::System}}});
    api_ = std::make_unique<Api>(cfg);
    auto r = api_->handle({"POST", "/v1/sessions", {}, json{{"token", g.token.empty() ? kLocalToken : g.token}}.dump(), ""});
    if (r.status != 201) throw Fail{kDenied, "token rejected"};
    sid_ = json::parse(r.body)["session_id"];
  }

  /// Returns the response; throws Fail for non-2xx statuses unless `allow`.
  Response call(const std::string& method, const std::string& path, const std::string& body = "",
                std::map<std::string, std::string> query = {}, std::initializer_list<int> allow = {}) {
    auto r = api_->handle({method, path, std::move(query), body, sid_});
    if (r.status >= 300 && std::find(allow.begin(), allow.end(), r.status) == allow.end()) {
      std::string code = "Internal";
      std::string msg = r.body;
      try {
        auto j = json::parse(r.body);
        code = j["error"]["code"];
        msg = j["error"]["message"];
      } catch (...) {
      }
      throw Fail{exit_for(code), method + " " + path + " -> " + std::to_string(r.status) + " " + code + ": " + msg};
    }
    return r;
  }

  json call_json(const std::string& method, const std::string& path, const std::string& body = "",
                 std::map<std::string, std::string> query = {}) {
    return json::parse(call(method, path, body, std::move(query)).body);
  }

  Api& api() { return *api_; }

 private:
  std::unique_ptr<Api> api_;
  std::string sid_;
};

void print(const Globals& g, const std::string& body, const std::string& human) {
  if (g.json_out) {
    std::cout << body;
    if (!body.empty() && body.back() != '\n') std::cout << '\n';
  } else {
    std::cout << human;
  }
}

/// Writes report, log, trace and incidents of a stored run.
void save_run(Session& s, const json& report, const fs::path& dir) {
  std::string id = report["run_id"];
  write_file(dir / "report.json", report.dump(2) + "\n");
  write_file(dir / "run.log", s.call("GET", "/v1/runs/" + id + "/log").body);
  write_file(dir / "trace.ndjson", s.call("GET", "/v1/runs/" + id + "/trace").body);
  write_file(dir / "incidents.json", report["incidents"].dump(2) + "\n");
}

std::string run_summary(const json& r) {
  std::ostringstream out;
  out << r["run_id"].get<std::string>() << " " << r["kind"].get<std::string>()
      << " outcome=" << r["outcome"].get<std::string>() << " incidents=" << r["incidents"].size()
      << " o_count=" << r["o_count"].get<std::int64_t>() << "\n";
  for (const auto& i : r["incidents"]) {
    out << "  " << i["incident_id"].get<std::string>() << " tick=" << i["tick"].get<std::int64_t>() << " "
        << i["kind"].get<std::string>() << " rule=" << i["violated_rule"]["rule_id"].get<std::string>()
        << " action=" << i["action_taken"].get<std::string>() << "\n";
  }
  return out.str();
}

json config_arg(const std::string& text) {
  if (text.empty()) return nullptr;
  std::string body = text;
  if (!text.empty() && text.front() != '{') body = read_file(text);
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    throw Fail{kValidation, std::string("config overrides: ") + e.what()};
  }
}

std::string verdict_summary(const json& v) {
  std::ostringstream out;
  out << v["property"].get<std::string>() << " " << v["result"].get<std::string>() << " k=" << v["bound_k"]
      << " states=" << v["explored_states"];
  if (v.contains("counterexample") && !v["counterexample"].is_null()) {
    out << " violation_tick=" << v["counterexample"]["violation_tick"] << " ("
        << v["counterexample"]["detail"].get<std::string>() << ")";
  }
  return out.str() + "\n";
}

std::atomic<bool> g_stop{false};
void on_signal(int) { g_stop = true; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Twin-based threat simulation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_file, "Service config file (JSON)");
  app.add_option("--spec", g.spec_file, "Specification file (JSON); default: reference scenario");
  app.add_option("--ledger", g.ledger_file, "Ledger chain file, loaded and persisted");
  app.add_option("--key-seed", g.key_seed, "Seed for the ledger signing keys");
  app.add_option("--token", g.token, "Access token (default: local analyst/system principal)")
      ->envname("TTS_TOKEN");
  app.add_option("--seed", g.seed, "Plant seed");
  app.add_flag("--json", g.json_out, "Print raw API responses");

  // validate-spec
  std::string spec_path;
  auto* validate = app.add_subcommand("validate-spec", "Validate a specification file");
  validate->add_option("file", spec_path, "Specification JSON")->required();

  // run-sim
  auto* run_sim = app.add_subcommand("run-sim", "Run a simulation-mode twin run");
  run_sim->require_subcommand(1);
  std::string overrides;
  std::string out_dir = ".";
  double velocity = 0, current = 0, pressure = 0;
  std::vector<std::int64_t> loads;
  std::int64_t load_every = 0, ticks = 0, objects = 1;
  auto* conveyor = run_sim->add_subcommand("conveyor", "Conveyor belt run");
  conveyor->add_option("--velocity,-V", velocity, "Belt velocity V")->required();
  conveyor->add_option("--loads", loads, "Requested load ticks")->delimiter(',');
  conveyor->add_option("--load-every", load_every, "Request a load every N ticks");
  conveyor->add_option("--ticks", ticks, "Run length (default max_ticks)");
  auto* arm = run_sim->add_subcommand("arm", "Welding arm run");
  arm->add_option("--current,-C", current, "Welding current C")->required();
  arm->add_option("--pressure,-P", pressure, "Welding pressure P")->required();
  arm->add_option("--objects", objects, "Chassis to weld");
  for (auto* sc : {conveyor, arm}) {
    sc->add_option("--twin-config", overrides, "TwinConfig overrides: JSON text or file");
    sc->add_option("--out-dir", out_dir, "Directory for report.json, run.log, trace.ndjson, incidents.json");
  }

  // replicate
  std::string trace_path, calibration_path;
  auto* rep = app.add_subcommand("replicate", "Replicate a recorded plant trace");
  rep->add_option("trace", trace_path, "Trace file (NDJSON)")->required();
  rep->add_option("--calibration", calibration_path, "Calibration records (JSON array)");
  rep->add_option("--twin-config", overrides, "TwinConfig overrides: JSON text or file");
  rep->add_option("--out-dir", out_dir, "Output directory");

  // verify
  std::string property;
  std::int64_t k = 50;
  int grid_points = 5;
  std::string property_overrides, verdict_out;
  auto* ver = app.add_subcommand("verify", "Bounded check of P1, P2, P3");
  ver->add_option("property", property, "P1, P2, P3 or all")->required();
  ver->add_option("-k,--bound", k, "Bound k");
  ver->add_option("--grid-points", grid_points, "Setpoint grid points");
  ver->add_option("--twin-config", overrides, "Model TwinConfig overrides: JSON text or file");
  ver->add_option("--property-config", property_overrides, "Property bounds overrides: JSON text or file");
  ver->add_option("--out", verdict_out, "Write verdicts JSON here");

  // ledger
  auto* led = app.add_subcommand("ledger", "Ledger operations");
  led->require_subcommand(1);
  std::string chain_file, export_out;
  auto* led_verify = led->add_subcommand("verify", "Verify the chain (or an exported file)");
  led_verify->add_option("file", chain_file, "Exported chain file");
  std::string q_kind, q_subject, q_asset, q_from, q_to;
  auto* led_query = led->add_subcommand("query", "Query entries");
  led_query->add_option("--kind", q_kind, "RuleEntry, ProvenanceEntry, SpecEntry, IncidentEntry");
  led_query->add_option("--subject", q_subject, "Subject id");
  led_query->add_option("--asset", q_asset, "Asset or sensor id");
  led_query->add_option("--from", q_from, "From timestamp (inclusive)");
  led_query->add_option("--to", q_to, "To timestamp (inclusive)");
  auto* led_export = led->add_subcommand("export", "Export the chain");
  led_export->add_option("--out", export_out, "Output file")->required();

  // demo
  std::string demo_dir = "demo-out";
  std::int64_t demo_ticks = 500;
  auto* demo = app.add_subcommand("demo", "Reference-scenario walkthrough");
  demo->add_option("--out-dir", demo_dir, "Output directory");
  demo->add_option("--ticks", demo_ticks, "Live plant ticks to record");
  demo->add_option("-k,--bound", k, "Verification bound");

  // api passthrough
  std::string method, path, body_file;
  auto* raw = app.add_subcommand("api", "Send one request to the API");
  raw->add_option("method", method, "GET, POST, PUT")->required();
  raw->add_option("path", path, "Endpoint path, e.g. /v1/rules")->required();
  raw->add_option("--body", body_file, "Request body file ('-' for stdin)");

  // serve
  std::string host;
  int port = -1;
  auto* serve_cmd = app.add_subcommand("serve", "Serve the API over HTTP");
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--port", port, "Port (0: any free port)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (serve_cmd->parsed()) {
      std::map<std::string, std::string> flags;
      if (!g.spec_file.empty()) flags["spec_file"] = g.spec_file;
      if (!g.ledger_file.empty()) flags["ledger_file"] = g.ledger_file;
      if (!g.key_seed.empty()) flags["key_seed"] = g.key_seed;
      if (g.seed >= 0) flags["seed"] = std::to_string(g.seed);
      if (!host.empty()) flags["host"] = host;
      if (port >= 0) flags["port"] = std::to_string(port);
      auto cfg = resolve_config(g.config_file.empty() ? std::string() : read_file(g.config_file), process_env(), flags);
      Api api(cfg);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      serve(api, [] { return g_stop.load(); },
            [&](int p) { std::cerr << "tts: listening on " << cfg.host << ":" << p << "\n"; });
      return kOk;
    }

    Session s(g, true);

    if (validate->parsed()) {
      auto r = s.call("POST", "/v1/spec/validate", read_file(spec_path));
      auto j = json::parse(r.body);
      std::ostringstream human;
      human << (j["ok"].get<bool>() ? "ok" : "invalid") << " spec_digest=" << j["spec_digest"].get<std::string>()
            << "\n";
      for (const auto& f : j["findings"]) {
        human << "  " << f["code"].get<std::string>() << " " << f["subject"].get<std::string>() << ": "
              << f["message"].get<std::string>() << "\n";
      }
      print(g, r.body, human.str());
      return j["ok"].get<bool>() ? kOk : kValidation;
    }

    if (run_sim->parsed()) {
      json body;
      std::string path_;
      if (conveyor->parsed()) {
        body = {{"velocity", velocity}};
        if (!loads.empty()) body["loads"] = loads;
        if (load_every > 0) body["load_every"] = load_every;
        if (ticks > 0) body["ticks"] = ticks;
        path_ = "/v1/runs/conveyor";
      } else {
        body = {{"current", current}, {"pressure", pressure}, {"objects", objects}};
        path_ = "/v1/runs/arm";
      }
      if (auto c = config_arg(overrides); !c.is_null()) body["config"] = c;
      auto r = s.call("POST", path_, body.dump());
      auto report = json::parse(r.body);
      save_run(s, report, out_dir);
      print(g, r.body, run_summary(report));
      return report["incidents"].empty() ? kOk : kFindings;
    }

    if (rep->parsed()) {
      json body{{"trace", read_file(trace_path)}};
      if (!calibration_path.empty()) body["calibration"] = json::parse(read_file(calibration_path));
      if (auto c = config_arg(overrides); !c.is_null()) body["config"] = c;
      auto r = s.call("POST", "/v1/runs/replicate", body.dump());
      auto report = json::parse(r.body);
      save_run(s, report, out_dir);
      print(g, r.body, run_summary(report));
      return report["incidents"].empty() ? kOk : kFindings;
    }

    if (ver->parsed()) {
      json body{{"property", property}, {"k", k}, {"grid_points", grid_points}};
      if (auto c = config_arg(overrides); !c.is_null()) body["config"] = c;
      if (auto c = config_arg(property_overrides); !c.is_null()) body["property_config"] = c;
      auto r = s.call("POST", "/v1/verify", body.dump());
      auto j = json::parse(r.body);
      if (!verdict_out.empty()) write_file(verdict_out, r.body);
      std::string human;
      for (const auto& v : j["verdicts"]) human += verdict_summary(v);
      print(g, r.body, human);
      return j["violations"].get<bool>() ? kFindings : kOk;
    }

    if (led_verify->parsed()) {
      Response r = chain_file.empty() ? s.call("GET", "/v1/ledger/verify")
                                      : s.call("POST", "/v1/ledger/verify-file", read_file(chain_file));
      auto j = json::parse(r.body);
      bool intact = j["intact"];
      std::ostringstream human;
      if (intact) {
        human << "intact blocks=" << j["blocks_checked"] << "\n";
      } else {
        human << "broken at block " << j["broken_at"] << " (" << j["reason"].get<std::string>()
              << "): " << j["detail"].get<std::string>() << "\n";
      }
      print(g, r.body, human.str());
      return intact ? kOk : kLedgerBroken;
    }

    if (led_query->parsed()) {
      std::map<std::string, std::string> q;
      if (!q_kind.empty()) q["kind"] = q_kind;
      if (!q_subject.empty()) q["subject"] = q_subject;
      if (!q_asset.empty()) q["asset"] = q_asset;
      if (!q_from.empty()) q["from"] = q_from;
      if (!q_to.empty()) q["to"] = q_to;
      auto r = s.call("GET", "/v1/ledger/query", "", q);
      auto j = json::parse(r.body);
      std::ostringstream human;
      for (const auto& h : j["hits"]) {
        human << "block=" << h["block_index"] << " t=" << h["timestamp"] << " " << h["kind"].get<std::string>()
              << " " << h["subject"].get<std::string>() << " by " << h["author"].get<std::string>() << "\n";
      }
      human << j["count"] << " entries\n";
      print(g, r.body, human.str());
      return kOk;
    }

    if (led_export->parsed()) {
      auto r = s.call("GET", "/v1/ledger/export");
      write_file(export_out, r.body);
      if (!g.json_out) std::cout << "wrote " << r.body.size() << " bytes to " << export_out << "\n";
      return kOk;
    }

    if (raw->parsed()) {
      std::string body;
      if (body_file == "-") {
        std::stringstream buf;
        buf << std::cin.rdbuf();
        body = buf.str();
      } else if (!body_file.empty()) {
        body = read_file(body_file);
      }
      auto r = s.call(method, path, body, {}, {400, 401, 403, 404, 405, 409, 422, 500, 503});
      std::cout << r.body;
      if (!r.body.empty() && r.body.back() != '\n') std::cout << '\n';
      if (r.status < 300) return kOk;
      try {
        return exit_for(json::parse(r.body)["error"]["code"]);
      } catch (...) {
        return kInternal;
      }
    }

    if (demo->parsed()) {
      fs::path dir = demo_dir;
      json summary = json::object();
      auto spec = s.call("GET", "/v1/spec").body;
      write_file(dir / "spec.json", spec);
      auto validation = s.call_json("POST", "/v1/spec/validate", spec);
      write_file(dir / "validation.json", validation.dump(2) + "\n");
      summary["spec_ok"] = validation["ok"];

      // Simulation mode: conveyor then arm, each writing its rules.
      auto conv = s.call_json("POST", "/v1/runs/conveyor", R"({"velocity":2,"load_every":50})");
      save_run(s, conv, dir / "conveyor");
      auto armr = s.call_json("POST", "/v1/runs/arm", R"({"current":8,"pressure":3,"objects":6})");
      save_run(s, armr, dir / "arm");

      // Live plant drive recorded for replication.
      for (const char* sp : {R"({"name":"V","value":2})", R"({"name":"C","value":8})", R"({"name":"P","value":3})"}) {
        s.call("POST", "/v1/plant/setpoint", sp);
      }
      s.call("POST", "/v1/plant/start", R"({"load_every":30})");
      s.call("POST", "/v1/plant/step", json{{"ticks", demo_ticks}}.dump());
      auto trace = s.call("GET", "/v1/plant/trace").body;
      s.call("POST", "/v1/plant/stop");
      write_file(dir / "live" / "trace.ndjson", trace);
      auto repl = s.call_json("POST", "/v1/runs/replicate", json{{"trace", trace}}.dump());
      save_run(s, repl, dir / "replicate");

      auto verdicts = s.call_json("POST", "/v1/verify", json{{"property", "all"}, {"k", k}}.dump());
      write_file(dir / "verdicts.json", verdicts.dump(2) + "\n");

      auto chain = s.call("GET", "/v1/ledger/export").body;
      write_file(dir / "ledger" / "chain.bin", chain);
      auto integrity = s.call_json("GET", "/v1/ledger/verify");
      write_file(dir / "ledger" / "verify.json", integrity.dump(2) + "\n");
      write_file(dir / "rules.json", s.call("GET", "/v1/rules").body);

      std::size_t incidents = conv["incidents"].size() + armr["incidents"].size() + repl["incidents"].size();
      summary["runs"] = json::array();
      for (const auto* r : {&conv, &armr, &repl}) {
        summary["runs"].push_back({{"run_id", (*r)["run_id"]},
                                   {"kind", (*r)["kind"]},
                                   {"outcome", (*r)["outcome"]},
                                   {"incidents", (*r)["incidents"].size()}});
      }
      summary["verdicts"] = json::array();
      for (const auto& v : verdicts["verdicts"]) summary["verdicts"].push_back({{v["property"].get<std::string>(), v["result"]}});
      summary["ledger_intact"] = integrity["intact"];
      write_file(dir / "summary.json", summary.dump(2) + "\n");

      std::ostringstream human;
      human << "spec " << (validation["ok"].get<bool>() ? "ok" : "invalid") << "\n"
            << run_summary(conv) << run_summary(armr) << run_summary(repl);
      for (const auto& v : verdicts["verdicts"]) human << verdict_summary(v);
      human << "ledger " << (integrity["intact"].get<bool>() ? "intact" : "broken") << "\n"
            << "wrote " << dir.string() << "\n";
      print(g, summary.dump(2) + "\n", human.str());
      bool clean = incidents == 0 && !verdicts["violations"].get<bool>() && integrity["intact"].get<bool>();
      return clean ? kOk : kFindings;
    }
  } catch (const Fail& f) {
    std::cerr << "tts: " << f.message << "\n";
    return f.code;
  } catch (const Error& e) {
    std::cerr << "tts: " << e.what() << "\n";
    switch (e.code()) {
      case Errc::Io: return kIo;
      case Errc::LedgerUnavailable: return kLedgerBroken;
      case Errc::BudgetExceeded: return kBudget;
      default: return kValidation;
    }
  } catch (const std::exception& e) {
    std::cerr << "tts: internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}
