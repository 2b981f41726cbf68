// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

namespace tts {

enum class Role : std::uint8_t {
  SecurityAnalyst,
  PlantOperator,
  Auditor,
  System,
};

std::string_view to_string(Role role) noexcept;
std::optional<Role> role_from_string(std::string_view name) noexcept;
inline constexpr Role kAllRoles[] = {Role::SecurityAnalyst, Role::PlantOperator, Role::Auditor,
                                     Role::System};

/// An accountable entity (E_ID) and the roles it holds.
struct Principal {
  std::string entity_id;
  std::set<Role> roles;

  bool has(Role r) const { return roles.contains(r); }
};

/// Everything a principal can attempt that the role matrix decides on.
enum class Action : std::uint8_t {
  WriteRule,
  WriteProvenance,
  WriteSpec,
  WriteIncident,
  ReadLedger,
  IssueSetpoint,
  InjectFault,
  ControlPlant,
  RunTwin,
  RunVerification,
};

std::string_view to_string(Action action) noexcept;
std::optional<Action> action_from_string(std::string_view name) noexcept;
inline constexpr Action kAllActions[] = {
    Action::WriteRule,     Action::WriteProvenance, Action::WriteSpec,    Action::WriteIncident,
    Action::ReadLedger,    Action::IssueSetpoint,   Action::InjectFault,  Action::ControlPlant,
    Action::RunTwin,       Action::RunVerification,
};

/// The role matrix, kept as data so tests and docs can iterate it.
const std::map<Action, std::set<Role>>& permission_matrix();

bool permits(const Principal& principal, Action action);

/// Throws Error(Unauthorized) naming the principal and action.
void require(const Principal& principal, Action action);

}  // namespace tts
