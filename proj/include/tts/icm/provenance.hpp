// SPDX-License-Identifier: Apache-2.0
#pragma once

// Provenance tuples. Each kind carries exactly its own field set:
//   Process: {R_ID, R_D digest, E_ID, A_ID, S_ID, settings digest}
//   EK:      {A_ID, S_ID, chi}
//   CV:      {A_ID, asset status, S_ID, reading digest, (tau_min, tau_max)}
//   DK:      {A_ID, history digest, chi}
// Bulky fields are stored as SHA-256 digests of their canonical encoding.

#include <string>
#include <variant>

#include "tts/common/access.hpp"
#include "tts/common/canonical.hpp"
#include "tts/icm/knowledge.hpp"

namespace tts::icm {

enum class ProvenanceKind : std::uint8_t { Process = 1, EK = 2, CV = 3, DK = 4 };
std::string_view to_string(ProvenanceKind k) noexcept;

struct ProcessProvenance {
  std::string rule_id;
  Digest rule_description_digest{};
  std::string entity_id;
  std::string asset_id;
  std::string sensor_id;
  Digest settings_digest{};

  bool operator==(const ProcessProvenance&) const = default;
};

struct EkProvenance {
  std::string asset_id;
  std::string sensor_id;
  ConfigMap config;

  bool operator==(const EkProvenance&) const = default;
};

struct CvProvenance {
  std::string asset_id;
  bool asset_on = false;
  std::string sensor_id;
  Digest reading_digest{};
  double tau_min = 0.0;
  double tau_max = 0.0;

  bool operator==(const CvProvenance&) const = default;
};

struct DkProvenance {
  std::string asset_id;
  Digest history_digest{};
  ConfigMap config;

  bool operator==(const DkProvenance&) const = default;
};

using ProvenancePayload = std::variant<ProcessProvenance, EkProvenance, CvProvenance, DkProvenance>;

struct ProvenanceRecord {
  ProvenancePayload payload;
  double created_at = 0.0;
  std::string author;

  ProvenanceKind kind() const;
  std::string asset_id() const;
  /// Stable identifier used as the ledger subject, e.g. "prov/EK/PLC1/sensor1".
  std::string subject() const;

  bool operator==(const ProvenanceRecord&) const = default;
};

Bytes encode(const ProvenanceRecord& record);
ProvenanceRecord decode_provenance(ByteView bytes);

Digest reading_digest(const plant::SensorReading& reading);
Digest settings_digest(const ConfigMap& settings);

// Constructors, one per tuple. Each checks the referenced ids against the
// engineering knowledge (Error(UnknownReference)) and that the author may
// write provenance (Error(Unauthorized)).

ProvenanceRecord build_process_provenance(const EngineeringKnowledge& ek, const Principal& author,
                                          const std::string& rule_id,
                                          const std::string& rule_description,
                                          const std::string& rule_author,
                                          const std::string& asset_id,
                                          const std::string& sensor_id,
                                          const ConfigMap& settings, double now);

ProvenanceRecord build_ek_provenance(const EngineeringKnowledge& ek, const Principal& author,
                                     const std::string& asset_id, const std::string& sensor_id,
                                     const ConfigMap& config, double now);

ProvenanceRecord build_cv_provenance(const EngineeringKnowledge& ek, const Principal& author,
                                     const std::string& asset_id, bool asset_on,
                                     const plant::SensorReading& reading,
                                     const CalibrationRecord& cal, double now);

ProvenanceRecord build_dk_provenance(const EngineeringKnowledge& ek, const Principal& author,
                                     const DomainKnowledge& dk, const ConfigMap& config,
                                     double now);

}  // namespace tts::icm
