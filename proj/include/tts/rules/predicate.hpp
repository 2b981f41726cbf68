// SPDX-License-Identifier: Apache-2.0
#pragma once

// Closed predicate language for S&S rules.
//
// Canonical text (prefix notation, operands of and/or sorted):
//   (in-bounds <sensor> <lo> <hi>)
//   (status-is <asset> on|off)
//   (count-at-most <counter> <n>)
//   (rate-at-most <sensor> <delta> <window>)
//   (role-required <Action> <Role>)
//   (const pass|fail)
//   (and p...) (or p...) (not p)

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tts/common/access.hpp"
#include "tts/icm/knowledge.hpp"

namespace tts::rules {

struct Predicate;
using PredicatePtr = std::shared_ptr<const Predicate>;

struct SensorInBounds {
  std::string sensor_id;
  double lo = 0.0;
  double hi = 0.0;
};

struct AssetStatusIs {
  std::string asset_id;
  bool on = true;
};

struct CountAtMost {
  std::string counter;
  std::int64_t n = 0;
};

/// Largest absolute change between consecutive samples among the last
/// `window` samples of the sensor history must not exceed delta.
struct RateAtMost {
  std::string sensor_id;
  double delta = 0.0;
  std::int64_t window = 1;
};

/// Every recorded action of this kind must have been taken by a holder of `role`.
struct RoleRequired {
  Action action = Action::WriteRule;
  Role role = Role::SecurityAnalyst;
};

struct Const {
  bool pass = true;
};

struct And {
  std::vector<PredicatePtr> operands;
};

struct Or {
  std::vector<PredicatePtr> operands;
};

struct Not {
  PredicatePtr operand;
};

struct Predicate {
  std::variant<SensorInBounds, AssetStatusIs, CountAtMost, RateAtMost, RoleRequired, Const, And,
               Or, Not>
      node;
};

PredicatePtr in_bounds(std::string sensor_id, double lo, double hi);
PredicatePtr status_is(std::string asset_id, bool on);
PredicatePtr count_at_most(std::string counter, std::int64_t n);
PredicatePtr rate_at_most(std::string sensor_id, double delta, std::int64_t window);
PredicatePtr role_required(Action action, Role role);
PredicatePtr constant(bool pass);
PredicatePtr all_of(std::vector<PredicatePtr> operands);
PredicatePtr any_of(std::vector<PredicatePtr> operands);
PredicatePtr negate(PredicatePtr operand);

std::string to_text(const Predicate& p);
inline std::string to_text(const PredicatePtr& p) { return to_text(*p); }

/// Throws Error(MalformedPredicate) with the offending position.
PredicatePtr parse_predicate(std::string_view text);

std::size_t depth(const Predicate& p);

inline constexpr std::size_t kMaxDepth = 16;

/// Depth, finite bounds with lo <= hi, ids known to the engineering
/// knowledge, non-empty and/or. Throws Error(MalformedPredicate).
void check_well_formed(const Predicate& p, const icm::EngineeringKnowledge& ek);

/// Sensor and asset ids the predicate mentions.
std::set<std::string> referenced_ids(const Predicate& p);

/// A lone in-bounds atom, possibly conjoined with status atoms, yields its
/// bounds; used to match threshold rules.
const SensorInBounds* threshold_atom(const Predicate& p);

}  // namespace tts::rules
