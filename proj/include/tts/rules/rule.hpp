// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tts/icm/knowledge.hpp"
#include "tts/ledger/ledger.hpp"
#include "tts/rules/predicate.hpp"

namespace tts::rules {

struct Rule {
  std::string rule_id;
  PredicatePtr description;
  std::set<std::string> association;
  std::string author;
  std::int64_t version = 1;
  double created_at = 0.0;
  double updated_at = 0.0;

  bool active() const;
};

Bytes encode(const Rule& rule);
/// Throws Error(Malformed).
Rule decode_rule(ByteView body);
Digest rule_digest(const Rule& rule);

struct ActionRecord {
  Action action = Action::WriteRule;
  std::string actor;
  std::set<Role> roles;
};

/// Everything a predicate may look at.
struct TelemetrySnapshot {
  std::map<std::string, double> sensors;
  std::map<std::string, bool> assets;
  std::map<std::string, std::int64_t> counters;
  std::map<std::string, std::vector<double>> history;
  std::vector<ActionRecord> actions;
};

struct AtomFailure {
  std::string atom;  // canonical text of the failing atom
  std::map<std::string, double> observed;
};

struct Verdict {
  bool pass = true;
  std::string rule_id;
  std::int64_t version = 0;
  std::vector<AtomFailure> failures;
};

/// Pure. Throws Error(MissingSignal) when the snapshot lacks a referenced id.
Verdict evaluate(const Rule& rule, const TelemetrySnapshot& snapshot);
bool holds(const Predicate& p, const TelemetrySnapshot& snapshot);

/// Every version of a rule in chain order.
std::vector<Rule> rule_history(const ledger::Ledger& ledger, const std::string& rule_id);

/// Rule lifecycle over a ledger: RBAC check, id assignment, ledger append
/// before return. Upserts are serialized.
class RuleRegistry {
 public:
  using Clock = std::function<double()>;

  RuleRegistry(std::shared_ptr<ledger::Ledger> ledger, icm::EngineeringKnowledge ek, Clock clock);

  /// Create when `existing` is empty, else replace the predicate and bump
  /// the version. Throws Unauthorized, UnknownRule, MalformedPredicate.
  std::string upsert_rule(const Principal& principal, PredicatePtr description,
                          std::set<std::string> association,
                          const std::optional<std::string>& existing = std::nullopt);

  /// One in-bounds rule per record; rules already associated with the
  /// record's sensor are updated instead of duplicated.
  std::vector<std::string> derive_threshold_rules(const std::vector<icm::CalibrationRecord>& records,
                                                  const Principal& author);

  /// Writes a new version whose predicate is (const pass).
  std::string deactivate(const Principal& principal, const std::string& rule_id);

  std::optional<Rule> get(const std::string& rule_id) const;
  std::vector<Rule> all() const;
  std::vector<Rule> active() const;
  /// Active rules whose association contains `id`, by rule id.
  std::vector<Rule> find_by_association(const std::string& id) const;
  /// Active threshold rule on `sensor_id`, if any.
  std::optional<Rule> threshold_rule_for(const std::string& sensor_id) const;

  /// Rebuilds the in-memory index from the ledger.
  void reload();

  const icm::EngineeringKnowledge& engineering_knowledge() const { return ek_; }
  ledger::Ledger& ledger() { return *ledger_; }
  const ledger::Ledger& ledger() const { return *ledger_; }

 private:
  std::string upsert_locked(const Principal& principal, PredicatePtr description,
                            std::set<std::string> association,
                            const std::optional<std::string>& existing);

  std::shared_ptr<ledger::Ledger> ledger_;
  icm::EngineeringKnowledge ek_;
  Clock clock_;
  mutable std::mutex mu_;
  std::map<std::string, Rule> rules_;
  std::int64_t next_id_ = 1;
};

/// Sorts rule ids "R-<n>" numerically.
bool rule_id_less(const std::string& a, const std::string& b);

}  // namespace tts::rules
