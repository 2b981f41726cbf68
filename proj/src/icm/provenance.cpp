// SPDX-License-Identifier: Apache-2.0
#include "tts/icm/provenance.hpp"

#include "tts/common/error.hpp"

namespace tts::icm {

std::string_view to_string(ProvenanceKind k) noexcept {
  switch (k) {
    case ProvenanceKind::Process: return "Process";
    case ProvenanceKind::EK: return "EK";
    case ProvenanceKind::CV: return "CV";
    case ProvenanceKind::DK: return "DK";
  }
  return "Unknown";
}

ProvenanceKind ProvenanceRecord::kind() const {
  return static_cast<ProvenanceKind>(payload.index() + 1);
}

std::string ProvenanceRecord::asset_id() const {
  return std::visit([](const auto& p) { return p.asset_id; }, payload);
}

std::string ProvenanceRecord::subject() const {
  std::string s = "prov/" + std::string(to_string(kind())) + "/" + asset_id();
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ProcessProvenance>) {
          s += "/" + p.sensor_id + "/" + p.rule_id;
        } else if constexpr (std::is_same_v<T, EkProvenance> || std::is_same_v<T, CvProvenance>) {
          s += "/" + p.sensor_id;
        }
      },
      payload);
  return s;
}

Bytes encode(const ProvenanceRecord& record) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(record.kind()));
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, ProcessProvenance>) {
          w.str(p.rule_id).digest(p.rule_description_digest).str(p.entity_id).str(p.asset_id);
          w.str(p.sensor_id).digest(p.settings_digest);
        } else if constexpr (std::is_same_v<T, EkProvenance>) {
          w.str(p.asset_id).str(p.sensor_id);
          encode(w, p.config);
        } else if constexpr (std::is_same_v<T, CvProvenance>) {
          w.str(p.asset_id).boolean(p.asset_on).str(p.sensor_id).digest(p.reading_digest);
          w.f64(p.tau_min).f64(p.tau_max);
        } else {
          w.str(p.asset_id).digest(p.history_digest);
          encode(w, p.config);
        }
      },
      record.payload);
  w.f64(record.created_at).str(record.author);
  return std::move(w).bytes();
}

ProvenanceRecord decode_provenance(ByteView bytes) {
  ByteReader r(bytes);
  ProvenanceRecord rec;
  switch (r.u8()) {
    case 1: {
      ProcessProvenance p;
      p.rule_id = r.str();
      p.rule_description_digest = r.digest();
      p.entity_id = r.str();
      p.asset_id = r.str();
      p.sensor_id = r.str();
      p.settings_digest = r.digest();
      rec.payload = std::move(p);
      break;
    }
    case 2: {
      EkProvenance p;
      p.asset_id = r.str();
      p.sensor_id = r.str();
      p.config = decode_config(r);
      rec.payload = std::move(p);
      break;
    }
    case 3: {
      CvProvenance p;
      p.asset_id = r.str();
      p.asset_on = r.boolean();
      p.sensor_id = r.str();
      p.reading_digest = r.digest();
      p.tau_min = r.f64();
      p.tau_max = r.f64();
      rec.payload = std::move(p);
      break;
    }
    case 4: {
      DkProvenance p;
      p.asset_id = r.str();
      p.history_digest = r.digest();
      p.config = decode_config(r);
      rec.payload = std::move(p);
      break;
    }
    default: throw Error(Errc::Malformed, "unknown provenance kind");
  }
  rec.created_at = r.f64();
  rec.author = r.str();
  r.finish();
  return rec;
}

Digest reading_digest(const plant::SensorReading& reading) {
  ByteWriter w;
  w.str(reading.sensor_id).u8(static_cast<std::uint8_t>(reading.sensor_type)).f64(reading.value);
  w.f64(reading.timestamp).str(reading.asset_id);
  return hash(w.bytes());
}

Digest settings_digest(const ConfigMap& settings) {
  ByteWriter w;
  encode(w, settings);
  return hash(w.bytes());
}

namespace {

void require_asset(const EngineeringKnowledge& ek, const std::string& asset_id) {
  if (!ek.find_device(asset_id)) {
    throw Error(Errc::UnknownReference, "asset '" + asset_id + "' not in engineering knowledge");
  }
}

void require_sensor(const EngineeringKnowledge& ek, const std::string& sensor_id) {
  if (!ek.find_sensor(sensor_id)) {
    throw Error(Errc::UnknownReference, "sensor '" + sensor_id + "' not in engineering knowledge");
  }
}

}  // namespace

ProvenanceRecord build_process_provenance(const EngineeringKnowledge& ek, const Principal& author,
                                          const std::string& rule_id,
                                          const std::string& rule_description,
                                          const std::string& rule_author,
                                          const std::string& asset_id,
                                          const std::string& sensor_id,
                                          const ConfigMap& settings, double now) {
  require(author, Action::WriteProvenance);
  require_asset(ek, asset_id);
  require_sensor(ek, sensor_id);
  if (rule_id.empty()) throw Error(Errc::UnknownReference, "empty rule id");
  ProcessProvenance p{rule_id, hash(rule_description), rule_author, asset_id, sensor_id,
                      settings_digest(settings)};
  return {std::move(p), now, author.entity_id};
}

ProvenanceRecord build_ek_provenance(const EngineeringKnowledge& ek, const Principal& author,
                                     const std::string& asset_id, const std::string& sensor_id,
                                     const ConfigMap& config, double now) {
  require(author, Action::WriteProvenance);
  require_asset(ek, asset_id);
  require_sensor(ek, sensor_id);
  return {EkProvenance{asset_id, sensor_id, config}, now, author.entity_id};
}

ProvenanceRecord build_cv_provenance(const EngineeringKnowledge& ek, const Principal& author,
                                     const std::string& asset_id, bool asset_on,
                                     const plant::SensorReading& reading,
                                     const CalibrationRecord& cal, double now) {
  require(author, Action::WriteProvenance);
  require_asset(ek, asset_id);
  require_sensor(ek, reading.sensor_id);
  if (cal.sensor_id != reading.sensor_id) {
    throw Error(Errc::SensorMismatch, "calibration does not belong to the reading's sensor");
  }
  return {CvProvenance{asset_id, asset_on, reading.sensor_id, reading_digest(reading), cal.tau_min,
                       cal.tau_max},
          now, author.entity_id};
}

ProvenanceRecord build_dk_provenance(const EngineeringKnowledge& ek, const Principal& author,
                                     const DomainKnowledge& dk, const ConfigMap& config,
                                     double now) {
  require(author, Action::WriteProvenance);
  require_asset(ek, dk.asset_id);
  return {DkProvenance{dk.asset_id, hash(dk.canonical_history()), config}, now, author.entity_id};
}

}  // namespace tts::icm
