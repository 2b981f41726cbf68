// SPDX-License-Identifier: Apache-2.0
#include "tts/common/access.hpp"

#include "tts/common/error.hpp"

namespace tts {

std::string_view to_string(Role role) noexcept {
  switch (role) {
    case Role::SecurityAnalyst: return "SecurityAnalyst";
    case Role::PlantOperator: return "PlantOperator";
    case Role::Auditor: return "Auditor";
    case Role::System: return "System";
  }
  return "Unknown";
}

std::optional<Role> role_from_string(std::string_view name) noexcept {
  for (auto r : kAllRoles) {
    if (to_string(r) == name) return r;
  }
  return std::nullopt;
}

std::string_view to_string(Action action) noexcept {
  switch (action) {
    case Action::WriteRule: return "WriteRule";
    case Action::WriteProvenance: return "WriteProvenance";
    case Action::WriteSpec: return "WriteSpec";
    case Action::WriteIncident: return "WriteIncident";
    case Action::ReadLedger: return "ReadLedger";
    case Action::IssueSetpoint: return "IssueSetpoint";
    case Action::InjectFault: return "InjectFault";
    case Action::ControlPlant: return "ControlPlant";
    case Action::RunTwin: return "RunTwin";
    case Action::RunVerification: return "RunVerification";
  }
  return "Unknown";
}

std::optional<Action> action_from_string(std::string_view name) noexcept {
  for (auto a : kAllActions) {
    if (to_string(a) == name) return a;
  }
  return std::nullopt;
}

const std::map<Action, std::set<Role>>& permission_matrix() {
  using enum Role;
  static const std::map<Action, std::set<Role>> matrix{
      {Action::WriteRule, {SecurityAnalyst, System}},
      {Action::WriteProvenance, {SecurityAnalyst, System}},
      {Action::WriteSpec, {SecurityAnalyst, System}},
      {Action::WriteIncident, {SecurityAnalyst, System}},
      {Action::ReadLedger, {SecurityAnalyst, Auditor, System}},
      {Action::IssueSetpoint, {PlantOperator, SecurityAnalyst, System}},
      {Action::InjectFault, {SecurityAnalyst}},
      {Action::ControlPlant, {PlantOperator, System}},
      {Action::RunTwin, {SecurityAnalyst, System}},
      {Action::RunVerification, {SecurityAnalyst, Auditor, System}},
  };
  return matrix;
}

bool permits(const Principal& principal, Action action) {
  const auto& allowed = permission_matrix().at(action);
  for (auto r : principal.roles) {
    if (allowed.contains(r)) return true;
  }
  return false;
}

void require(const Principal& principal, Action action) {
  if (!permits(principal, action)) {
    throw Error(Errc::Unauthorized,
                "'" + principal.entity_id + "' may not perform " + std::string(to_string(action)));
  }
}

}  // namespace tts
