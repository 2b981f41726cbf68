// SPDX-License-Identifier: Apache-2.0
#include "tts/rules/rule.hpp"

#include <algorithm>
#include <cmath>

#include "tts/common/error.hpp"

namespace tts::rules {

bool Rule::active() const {
  if (!description) return false;
  const auto* c = std::get_if<Const>(&description->node);
  return !(c && c->pass);
}

Bytes encode(const Rule& rule) {
  ByteWriter w;
  w.str(rule.rule_id).str(rule.description ? to_text(*rule.description) : std::string());
  w.u32(static_cast<std::uint32_t>(rule.association.size()));
  for (const auto& a : rule.association) w.str(a);
  w.str(rule.author).i64(rule.version).f64(rule.created_at).f64(rule.updated_at);
  return std::move(w).bytes();
}

Rule decode_rule(ByteView body) {
  ByteReader r(body);
  Rule rule;
  rule.rule_id = r.str();
  auto text = r.str();
  try {
    rule.description = parse_predicate(text);
  } catch (const Error& e) {
    throw Error(Errc::Malformed, std::string("stored rule predicate: ") + e.what());
  }
  auto n = r.u32();
  if (n > r.remaining() / 4) throw Error(Errc::Malformed, "association count out of range");
  for (std::uint32_t i = 0; i < n; ++i) rule.association.insert(r.str());
  rule.author = r.str();
  rule.version = r.i64();
  rule.created_at = r.f64();
  rule.updated_at = r.f64();
  r.finish();
  return rule;
}

Digest rule_digest(const Rule& rule) { return hash(encode(rule)); }

// --- evaluation -------------------------------------------------------------

namespace {

struct Eval {
  bool ok = true;
  std::vector<AtomFailure> failures;
  std::map<std::string, double> observed;
};

[[noreturn]] void missing(const std::string& id) {
  throw Error(Errc::MissingSignal, "snapshot has no value for '" + id + "'");
}

Eval eval(const Predicate& p, const TelemetrySnapshot& s) {
  Eval out;
  auto atom = [&](bool ok) {
    out.ok = ok;
    if (!ok) out.failures.push_back({to_text(p), out.observed});
  };
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, SensorInBounds>) {
          auto it = s.sensors.find(n.sensor_id);
          if (it == s.sensors.end()) missing(n.sensor_id);
          out.observed[n.sensor_id] = it->second;
          atom(n.lo <= it->second && it->second <= n.hi);
        } else if constexpr (std::is_same_v<T, AssetStatusIs>) {
          auto it = s.assets.find(n.asset_id);
          if (it == s.assets.end()) missing(n.asset_id);
          out.observed[n.asset_id] = it->second ? 1.0 : 0.0;
          atom(it->second == n.on);
        } else if constexpr (std::is_same_v<T, CountAtMost>) {
          auto it = s.counters.find(n.counter);
          if (it == s.counters.end()) missing(n.counter);
          out.observed[n.counter] = static_cast<double>(it->second);
          atom(it->second <= n.n);
        } else if constexpr (std::is_same_v<T, RateAtMost>) {
          auto it = s.history.find(n.sensor_id);
          if (it == s.history.end()) missing(n.sensor_id);
          const auto& h = it->second;
          auto count = std::min<std::size_t>(h.size(), static_cast<std::size_t>(n.window));
          double worst = 0.0;
          for (std::size_t i = h.size() - count + 1; i < h.size(); ++i) {
            worst = std::max(worst, std::fabs(h[i] - h[i - 1]));
          }
          out.observed[n.sensor_id] = worst;
          atom(worst <= n.delta);
        } else if constexpr (std::is_same_v<T, RoleRequired>) {
          double bad = 0;
          for (const auto& a : s.actions) {
            if (a.action == n.action && !a.roles.contains(n.role)) bad += 1;
          }
          out.observed["violations"] = bad;
          atom(bad == 0);
        } else if constexpr (std::is_same_v<T, Const>) {
          atom(n.pass);
        } else if constexpr (std::is_same_v<T, And> || std::is_same_v<T, Or>) {
          constexpr bool conj = std::is_same_v<T, And>;
          bool acc = conj;
          std::vector<AtomFailure> failures;
          for (const auto& op : n.operands) {
            auto e = eval(*op, s);
            out.observed.merge(e.observed);
            if constexpr (conj) {
              acc = acc && e.ok;
            } else {
              acc = acc || e.ok;
            }
            for (auto& f : e.failures) failures.push_back(std::move(f));
          }
          out.ok = acc;
          if (!acc) out.failures = std::move(failures);
        } else {
          auto e = eval(*n.operand, s);
          out.observed = e.observed;
          atom(!e.ok);
        }
      },
      p.node);
  return out;
}

}  // namespace

bool holds(const Predicate& p, const TelemetrySnapshot& snapshot) { return eval(p, snapshot).ok; }

Verdict evaluate(const Rule& rule, const TelemetrySnapshot& snapshot) {
  if (!rule.description) throw Error(Errc::MalformedPredicate, "rule has no predicate");
  auto e = eval(*rule.description, snapshot);
  Verdict v;
  v.pass = e.ok;
  v.rule_id = rule.rule_id;
  v.version = rule.version;
  if (!e.ok) v.failures = std::move(e.failures);
  return v;
}

std::vector<Rule> rule_history(const ledger::Ledger& ledger, const std::string& rule_id) {
  ledger::QueryFilter f;
  f.kind = ledger::EntryKind::RuleEntry;
  f.subject = rule_id;
  std::vector<Rule> out;
  for (const auto& hit : ledger.query(f)) out.push_back(decode_rule(hit.entry.body()));
  return out;
}

bool rule_id_less(const std::string& a, const std::string& b) {
  auto num = [](const std::string& s) -> long long {
    if (s.size() > 2 && s.starts_with("R-")) {
      try {
        return std::stoll(s.substr(2));
      } catch (...) {
      }
    }
    return -1;
  };
  auto na = num(a);
  auto nb = num(b);
  if (na != nb) return na < nb;
  return a < b;
}

// --- registry -----------------------------------------------------------------

RuleRegistry::RuleRegistry(std::shared_ptr<ledger::Ledger> ledger, icm::EngineeringKnowledge ek,
                           Clock clock)
    : ledger_(std::move(ledger)), ek_(std::move(ek)), clock_(std::move(clock)) {
  if (!ledger_) throw Error(Errc::LedgerUnavailable, "rule registry needs a ledger");
  if (!clock_) throw Error(Errc::InvalidArgument, "rule registry needs a clock");
  reload();
}

void RuleRegistry::reload() {
  std::lock_guard lock(mu_);
  rules_.clear();
  next_id_ = 1;
  ledger::QueryFilter f;
  f.kind = ledger::EntryKind::RuleEntry;
  for (const auto& hit : ledger_->query(f)) {
    auto rule = decode_rule(hit.entry.body());
    if (rule.rule_id.starts_with("R-")) {
      try {
        next_id_ = std::max<std::int64_t>(next_id_, std::stoll(rule.rule_id.substr(2)) + 1);
      } catch (...) {
      }
    }
    rules_[rule.rule_id] = std::move(rule);
  }
}

std::string RuleRegistry::upsert_rule(const Principal& principal, PredicatePtr description,
                                      std::set<std::string> association,
                                      const std::optional<std::string>& existing) {
  std::lock_guard lock(mu_);
  return upsert_locked(principal, std::move(description), std::move(association), existing);
}

std::string RuleRegistry::upsert_locked(const Principal& principal, PredicatePtr description,
                                        std::set<std::string> association,
                                        const std::optional<std::string>& existing) {
  require(principal, Action::WriteRule);
  const Rule* prior = nullptr;
  if (existing) {
    auto it = rules_.find(*existing);
    if (it == rules_.end()) throw Error(Errc::UnknownRule, "no rule '" + *existing + "'");
    prior = &it->second;
  }
  if (!description) throw Error(Errc::MalformedPredicate, "missing predicate");
  check_well_formed(*description, ek_);
  if (association.empty()) throw Error(Errc::MalformedPredicate, "association must not be empty");
  for (const auto& id : association) {
    if (!ek_.has_id(id)) {
      throw Error(Errc::MalformedPredicate, "association names unknown id '" + id + "'");
    }
  }

  Rule rule;
  double now = clock_();
  if (prior) {
    rule = *prior;
    rule.version = prior->version + 1;
  } else {
    rule.rule_id = "R-" + std::to_string(next_id_);
    rule.version = 1;
    rule.created_at = now;
  }
  rule.description = std::move(description);
  rule.association = std::move(association);
  rule.author = principal.entity_id;
  rule.updated_at = now;

  ledger::Envelope env{rule.rule_id, {rule.association.begin(), rule.association.end()}};
  ledger_->append({ledger_->make_entry(ledger::EntryKind::RuleEntry, env, encode(rule))}, principal);

  if (!prior) ++next_id_;
  auto id = rule.rule_id;
  rules_[id] = std::move(rule);
  return id;
}

std::vector<std::string> RuleRegistry::derive_threshold_rules(
    const std::vector<icm::CalibrationRecord>& records, const Principal& author) {
  require(author, Action::WriteRule);
  std::lock_guard lock(mu_);
  std::vector<std::string> ids;
  for (const auto& rec : records) {
    std::optional<std::string> existing;
    for (const auto& [id, rule] : rules_) {
      if (!rule.active() || !rule.association.contains(rec.sensor_id)) continue;
      const auto* atom = threshold_atom(*rule.description);
      if (atom && atom->sensor_id == rec.sensor_id) {
        existing = id;
        break;
      }
    }
    std::set<std::string> assoc{rec.sensor_id};
    if (const auto* s = ek_.find_sensor(rec.sensor_id)) assoc.insert(s->asset_id);
    ids.push_back(upsert_locked(author, in_bounds(rec.sensor_id, rec.tau_min, rec.tau_max),
                                std::move(assoc), existing));
  }
  return ids;
}

std::string RuleRegistry::deactivate(const Principal& principal, const std::string& rule_id) {
  std::lock_guard lock(mu_);
  require(principal, Action::WriteRule);
  auto it = rules_.find(rule_id);
  if (it == rules_.end()) throw Error(Errc::UnknownRule, "no rule '" + rule_id + "'");
  return upsert_locked(principal, constant(true), it->second.association, rule_id);
}

std::optional<Rule> RuleRegistry::get(const std::string& rule_id) const {
  std::lock_guard lock(mu_);
  auto it = rules_.find(rule_id);
  if (it == rules_.end()) return std::nullopt;
  return it->second;
}

namespace {

void sort_rules(std::vector<Rule>& v) {
  std::sort(v.begin(), v.end(),
            [](const Rule& a, const Rule& b) { return rule_id_less(a.rule_id, b.rule_id); });
}

}  // namespace

std::vector<Rule> RuleRegistry::all() const {
  std::lock_guard lock(mu_);
  std::vector<Rule> out;
  for (const auto& [id, r] : rules_) out.push_back(r);
  sort_rules(out);
  return out;
}

std::vector<Rule> RuleRegistry::active() const {
  std::lock_guard lock(mu_);
  std::vector<Rule> out;
  for (const auto& [id, r] : rules_) {
    if (r.active()) out.push_back(r);
  }
  sort_rules(out);
  return out;
}

std::vector<Rule> RuleRegistry::find_by_association(const std::string& id) const {
  std::lock_guard lock(mu_);
  std::vector<Rule> out;
  for (const auto& [rid, r] : rules_) {
    if (r.active() && r.association.contains(id)) out.push_back(r);
  }
  sort_rules(out);
  return out;
}

std::optional<Rule> RuleRegistry::threshold_rule_for(const std::string& sensor_id) const {
  for (auto& r : find_by_association(sensor_id)) {
    const auto* atom = threshold_atom(*r.description);
    if (atom && atom->sensor_id == sensor_id) return r;
  }
  return std::nullopt;
}

}  // namespace tts::rules
