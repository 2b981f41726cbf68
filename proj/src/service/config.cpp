// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cctype>
#include <cstdlib>

#include "json.hpp"
#include "tts/common/error.hpp"
#include "tts/common/text.hpp"
#include "tts/service/service.hpp"

namespace tts::service {

using json = nlohmann::ordered_json;

namespace {

constexpr const char* kKeys[] = {"host",          "port",      "key_seed",         "session_ttl",
                                 "ledger_file",   "spec_file", "telemetry_buffer", "step_rate",
                                 "seed",          "logical_clock", "tokens"};

[[noreturn]] void invalid(const std::string& source, const std::string& key, const std::string& why) {
  throw Error(Errc::ConfigInvalid, source + ": " + key + ": " + why);
}

std::int64_t to_int(const std::string& source, const std::string& key, const std::string& text) {
  double v = 0;
  try {
    v = parse_number(text);
  } catch (const Error&) {
    invalid(source, key, "expected an integer, got '" + text + "'");
  }
  if (v != static_cast<double>(static_cast<std::int64_t>(v))) invalid(source, key, "expected an integer");
  return static_cast<std::int64_t>(v);
}

double to_double(const std::string& source, const std::string& key, const std::string& text) {
  try {
    return parse_number(text);
  } catch (const Error&) {
    invalid(source, key, "expected a number, got '" + text + "'");
  }
}

bool to_bool(const std::string& source, const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
  if (text == "0" || text == "false" || text == "no" || text == "off") return false;
  invalid(source, key, "expected a boolean, got '" + text + "'");
}

void check(ServiceConfig& c, const std::string& source) {
  if (c.port < 0 || c.port > 65535) invalid(source, "port", "out of range");
  if (!(c.session_ttl > 0)) invalid(source, "session_ttl", "must be positive");
  if (c.telemetry_buffer == 0) invalid(source, "telemetry_buffer", "must be positive");
  if (!(c.step_rate > 0)) invalid(source, "step_rate", "must be positive");
  if (c.tokens.empty()) invalid(source, "tokens", "at least one token is required");
}

/// Shared by environment variables and flags: every value arrives as text.
void apply_text(ServiceConfig& c, const std::string& source, const std::string& key,
                const std::string& v) {
  if (key == "host") {
    c.host = v;
  } else if (key == "port") {
    c.port = static_cast<int>(to_int(source, key, v));
  } else if (key == "key_seed") {
    c.key_seed = v;
  } else if (key == "session_ttl") {
    c.session_ttl = to_double(source, key, v);
  } else if (key == "ledger_file") {
    c.ledger_file = v;
  } else if (key == "spec_file") {
    c.spec_file = v;
  } else if (key == "telemetry_buffer") {
    auto n = to_int(source, key, v);
    if (n <= 0) invalid(source, key, "must be positive");
    c.telemetry_buffer = static_cast<std::size_t>(n);
  } else if (key == "step_rate") {
    c.step_rate = to_double(source, key, v);
  } else if (key == "seed") {
    auto n = to_int(source, key, v);
    if (n < 0) invalid(source, key, "must not be negative");
    c.seed = static_cast<std::uint64_t>(n);
  } else if (key == "logical_clock") {
    c.logical_clock = to_bool(source, key, v);
  } else if (key == "tokens") {
    try {
      c.tokens = parse_token_list(v);
    } catch (const Error& e) {
      invalid(source, key, e.what());
    }
  } else {
    invalid(source, key, "unknown key");
  }
}

void apply_file(ServiceConfig& c, std::string_view text) {
  const std::string source = "config file";
  bool blank = text.find_first_not_of(" \t\r\n") == std::string_view::npos;
  if (blank) return;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    invalid(source, "$", e.what());
  }
  if (!j.is_object()) invalid(source, "$", "expected an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "tokens") {
      if (!v.is_array()) invalid(source, key, "expected an array");
      std::vector<TokenGrant> grants;
      for (const auto& t : v) {
        if (!t.is_object() || !t.contains("token") || !t.contains("entity") || !t.contains("roles"))
          invalid(source, key, "each token needs token, entity and roles");
        TokenGrant g{t["token"].get<std::string>(), {t["entity"].get<std::string>(), {}}};
        for (const auto& r : t["roles"]) {
          auto role = role_from_string(r.get<std::string>());
          if (!role) invalid(source, key, "unknown role " + r.dump());
          g.principal.roles.insert(*role);
        }
        grants.push_back(std::move(g));
      }
      c.tokens = std::move(grants);
    } else if (v.is_string()) {
      apply_text(c, source, key, v.get<std::string>());
    } else if (v.is_boolean()) {
      apply_text(c, source, key, v.get<bool>() ? "true" : "false");
    } else if (v.is_number()) {
      apply_text(c, source, key, format_number(v.get<double>()));
    } else {
      invalid(source, key, "unsupported value " + v.dump());
    }
  }
  check(c, source);
}

std::string env_name(std::string key) {
  for (auto& ch : key) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return "TTS_" + key;
}

}  // namespace

std::vector<TokenGrant> ServiceConfig::default_tokens() {
  return {
      {"analyst-token", {"analyst", {Role::SecurityAnalyst}}},
      {"operator-token", {"operator", {Role::PlantOperator}}},
      {"auditor-token", {"auditor", {Role::Auditor}}},
  };
}

std::vector<TokenGrant> parse_token_list(std::string_view text) {
  std::vector<TokenGrant> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find(';', pos);
    if (end == std::string_view::npos) end = text.size();
    auto item = text.substr(pos, end - pos);
    pos = end + 1;
    if (item.empty()) continue;
    auto eq = item.find('=');
    auto colon = item.find(':', eq == std::string_view::npos ? 0 : eq);
    if (eq == std::string_view::npos || colon == std::string_view::npos || eq == 0 || colon == eq + 1)
      throw Error(Errc::ConfigInvalid, "token entry '" + std::string(item) + "' is not token=entity:Role");
    TokenGrant g{std::string(item.substr(0, eq)), {std::string(item.substr(eq + 1, colon - eq - 1)), {}}};
    auto roles = item.substr(colon + 1);
    std::size_t rp = 0;
    while (rp <= roles.size()) {
      auto re = roles.find('+', rp);
      if (re == std::string_view::npos) re = roles.size();
      auto name = roles.substr(rp, re - rp);
      rp = re + 1;
      auto role = role_from_string(name);
      if (!role) throw Error(Errc::ConfigInvalid, "unknown role '" + std::string(name) + "'");
      g.principal.roles.insert(*role);
    }
    out.push_back(std::move(g));
  }
  if (out.empty()) throw Error(Errc::ConfigInvalid, "empty token list");
  return out;
}

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  };
}

ServiceConfig resolve_config(std::string_view file_text, const EnvLookup& env,
                             const std::map<std::string, std::string>& flags) {
  ServiceConfig c;
  apply_file(c, file_text);
  if (env) {
    for (const char* key : kKeys) {
      auto name = env_name(key);
      if (auto v = env(name)) apply_text(c, "environment " + name, key, *v);
    }
    check(c, "environment");
  }
  for (const auto& [key, v] : flags) apply_text(c, "flag --" + key, key, v);
  check(c, "flags");
  return c;
}

// ---------------------------------------------------------------------------

std::uint64_t EventStream::publish(std::string type, std::string payload) {
  std::uint64_t seq = 0;
  {
    std::lock_guard lock(mu_);
    seq = ++seq_;
    StreamMessage m{seq, std::move(type), std::move(payload)};
    if (m.type == "telemetry") {
      telemetry_.push_back(std::move(m));
      while (telemetry_.size() > capacity_) {
        telemetry_.pop_front();
        ++dropped_;
      }
    } else {
      events_.push_back(std::move(m));
    }
  }
  cv_.notify_all();
  return seq;
}

std::vector<StreamMessage> EventStream::since(std::uint64_t after, std::size_t limit,
                                              std::chrono::milliseconds wait) const {
  std::unique_lock lock(mu_);
  if (wait.count() > 0) cv_.wait_for(lock, wait, [&] { return seq_ > after; });
  std::vector<StreamMessage> out;
  auto t = std::upper_bound(telemetry_.begin(), telemetry_.end(), after,
                            [](std::uint64_t s, const StreamMessage& m) { return s < m.seq; });
  auto e = std::upper_bound(events_.begin(), events_.end(), after,
                            [](std::uint64_t s, const StreamMessage& m) { return s < m.seq; });
  while (out.size() < limit && (t != telemetry_.end() || e != events_.end())) {
    if (e == events_.end() || (t != telemetry_.end() && t->seq < e->seq)) {
      out.push_back(*t++);
    } else {
      out.push_back(*e++);
    }
  }
  return out;
}

std::uint64_t EventStream::last_seq() const {
  std::lock_guard lock(mu_);
  return seq_;
}

std::uint64_t EventStream::dropped_telemetry() const {
  std::lock_guard lock(mu_);
  return dropped_;
}

}  // namespace tts::service
