// SPDX-License-Identifier: Apache-2.0
#include "tts/icm/knowledge.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "tts/common/error.hpp"
#include "tts/common/text.hpp"

namespace tts::icm {

namespace {

enum : std::uint8_t { kBool = 1, kInt = 2, kDouble = 3, kString = 4 };

void encode_strings(ByteWriter& w, const std::vector<std::string>& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (const auto& s : v) w.str(s);
}

}  // namespace

void encode(ByteWriter& w, const ConfigMap& config) {
  w.u32(static_cast<std::uint32_t>(config.size()));
  for (const auto& [key, value] : config) {
    w.str(key);
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, bool>) {
            w.u8(kBool).boolean(v);
          } else if constexpr (std::is_same_v<T, std::int64_t>) {
            w.u8(kInt).i64(v);
          } else if constexpr (std::is_same_v<T, double>) {
            w.u8(kDouble).f64(v);
          } else {
            w.u8(kString).str(v);
          }
        },
        value);
  }
}

ConfigMap decode_config(ByteReader& r) {
  ConfigMap out;
  auto n = r.u32();
  std::string prev;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto key = r.str();
    if (i > 0 && key <= prev) throw Error(Errc::Malformed, "config keys not in canonical order");
    prev = key;
    switch (r.u8()) {
      case kBool: out[key] = r.boolean(); break;
      case kInt: out[key] = r.i64(); break;
      case kDouble: out[key] = r.f64(); break;
      case kString: out[key] = r.str(); break;
      default: throw Error(Errc::Malformed, "unknown config value tag");
    }
  }
  return out;
}

std::string to_text(const ConfigValue& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, bool>) {
          return x ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          return std::to_string(x);
        } else if constexpr (std::is_same_v<T, double>) {
          return format_number(x);
        } else {
          return x;
        }
      },
      v);
}

const DeviceSpec* EngineeringKnowledge::find_device(std::string_view asset_id) const {
  for (const auto& d : devices) {
    if (d.asset_id == asset_id) return &d;
  }
  return nullptr;
}

const SensorSpec* EngineeringKnowledge::find_sensor(std::string_view sensor_id) const {
  for (const auto& s : sensors) {
    if (s.sensor_id == sensor_id) return &s;
  }
  return nullptr;
}

Bytes EngineeringKnowledge::canonical() const {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(devices.size()));
  for (const auto& d : devices) {
    w.str(d.asset_id).str(d.name).str(d.type).str(d.make).str(d.model);
    encode_strings(w, d.standards);
    encode(w, d.config);
  }
  w.u32(static_cast<std::uint32_t>(sensors.size()));
  for (const auto& s : sensors) {
    w.str(s.sensor_id).u8(static_cast<std::uint8_t>(s.sensor_type)).str(s.asset_id).str(s.units);
  }
  w.u32(static_cast<std::uint32_t>(topology.size()));
  for (const auto& l : topology) w.str(l.from).str(l.to);
  w.u32(static_cast<std::uint32_t>(processes.size()));
  for (const auto& p : processes) {
    w.str(p.process_id);
    encode_strings(w, p.steps);
    encode_strings(w, p.constraints);
  }
  return std::move(w).bytes();
}

void encode(ByteWriter& w, const CalibrationRecord& c) {
  w.str(c.sensor_id).f64(c.tau_min).f64(c.tau_max).f64(c.calibrated_at).str(c.standard_ref);
}

CalibrationRecord decode_calibration(ByteReader& r) {
  CalibrationRecord c;
  c.sensor_id = r.str();
  c.tau_min = r.f64();
  c.tau_max = r.f64();
  c.calibrated_at = r.f64();
  c.standard_ref = r.str();
  return c;
}

std::string_view to_string(KnowledgeSource s) noexcept {
  switch (s) {
    case KnowledgeSource::Engineer: return "engineer";
    case KnowledgeSource::SupplyChain: return "supply_chain";
    case KnowledgeSource::Soc: return "soc";
  }
  return "unknown";
}

KnowledgeSource knowledge_source_from_string(std::string_view name) {
  for (auto s : {KnowledgeSource::Engineer, KnowledgeSource::SupplyChain, KnowledgeSource::Soc}) {
    if (to_string(s) == name) return s;
  }
  throw Error(Errc::Malformed, "unknown knowledge source '" + std::string(name) + "'");
}

Bytes DomainKnowledge::canonical_history() const {
  ByteWriter w;
  w.str(asset_id).u8(static_cast<std::uint8_t>(source));
  w.u32(static_cast<std::uint32_t>(history.size()));
  for (const auto& h : history) {
    w.f64(h.timestamp);
    encode(w, h.status);
    encode(w, h.config);
    w.str(h.note);
  }
  return std::move(w).bytes();
}

std::size_t ValidationReport::count(std::string_view code) const {
  return static_cast<std::size_t>(std::count_if(
      findings.begin(), findings.end(), [&](const Finding& f) { return f.code == code; }));
}

ValidationReport validate_spec(const EngineeringKnowledge& ek) {
  ValidationReport report;
  auto add = [&](std::string code, std::string subject, std::string message) {
    report.findings.push_back({std::move(code), std::move(subject), std::move(message)});
  };

  std::set<std::string> ids;
  std::set<std::string> device_ids;
  for (const auto& d : ek.devices) {
    if (d.asset_id.empty()) add("EMPTY_ID", "", "device without asset_id");
    if (!ids.insert(d.asset_id).second) add("DUP_ID", d.asset_id, "asset id declared twice");
    device_ids.insert(d.asset_id);
  }
  for (const auto& s : ek.sensors) {
    if (s.sensor_id.empty()) add("EMPTY_ID", "", "sensor without sensor_id");
    if (!ids.insert(s.sensor_id).second) add("DUP_ID", s.sensor_id, "sensor id declared twice");
  }
  for (const auto& s : ek.sensors) {
    if (!device_ids.contains(s.asset_id)) {
      add("ORPHAN_SENSOR", s.sensor_id, "owning asset '" + s.asset_id + "' is not declared");
    }
  }

  // Undirected reachability over every declared endpoint; all devices must
  // end up in a single component.
  std::map<std::string, std::set<std::string>> adjacency;
  for (const auto& id : ids) adjacency[id];
  for (const auto& l : ek.topology) {
    bool ok = true;
    for (const auto* end : {&l.from, &l.to}) {
      if (!ids.contains(*end)) {
        add("DANGLING_LINK", *end, "link " + l.from + " -> " + l.to + " references undeclared '" +
                                       *end + "'");
        ok = false;
      }
    }
    if (ok) {
      adjacency[l.from].insert(l.to);
      adjacency[l.to].insert(l.from);
    }
  }
  if (!device_ids.empty()) {
    std::set<std::string> seen;
    std::vector<std::string> stack{*device_ids.begin()};
    while (!stack.empty()) {
      auto cur = stack.back();
      stack.pop_back();
      if (!seen.insert(cur).second) continue;
      for (const auto& n : adjacency[cur]) stack.push_back(n);
    }
    for (const auto& d : device_ids) {
      if (!seen.contains(d)) add("DISCONNECTED", d, "device not reachable over the topology");
    }
  }

  std::set<std::string> process_ids;
  for (const auto& p : ek.processes) {
    if (!process_ids.insert(p.process_id).second) {
      add("DUP_ID", p.process_id, "process id declared twice");
    }
    for (const auto& step : p.steps) {
      if (!device_ids.contains(step)) {
        add("UNKNOWN_PROCESS_ASSET", step, "process " + p.process_id + " names an undeclared asset");
      }
    }
  }
  return report;
}

ValidationReport validate_calibration(const EngineeringKnowledge& ek,
                                      const std::vector<CalibrationRecord>& records) {
  ValidationReport report;
  std::set<std::string> seen;
  for (const auto& c : records) {
    if (!ek.find_sensor(c.sensor_id)) {
      report.findings.push_back({"UNKNOWN_SENSOR", c.sensor_id, "calibration for undeclared sensor"});
    }
    if (!seen.insert(c.sensor_id).second) {
      report.findings.push_back({"DUP_ID", c.sensor_id, "sensor calibrated twice"});
    }
    if (!std::isfinite(c.tau_min) || !std::isfinite(c.tau_max) || c.tau_min > c.tau_max) {
      report.findings.push_back({"BAD_BOUNDS", c.sensor_id, "need finite tau_min <= tau_max"});
    }
  }
  return report;
}

ValidationReport validate_domain_knowledge(const EngineeringKnowledge& ek,
                                           const std::vector<DomainKnowledge>& dk) {
  ValidationReport report;
  for (const auto& k : dk) {
    if (!ek.find_device(k.asset_id)) {
      report.findings.push_back({"UNKNOWN_ASSET", k.asset_id, "history for undeclared asset"});
    }
    for (std::size_t i = 1; i < k.history.size(); ++i) {
      if (k.history[i].timestamp < k.history[i - 1].timestamp) {
        report.findings.push_back({"NON_MONOTONE_HISTORY", k.asset_id, "history goes back in time"});
        break;
      }
    }
  }
  return report;
}

const CalibrationRecord& calibration_for(const std::vector<CalibrationRecord>& records,
                                         std::string_view sensor_id) {
  for (const auto& c : records) {
    if (c.sensor_id == sensor_id) return c;
  }
  throw Error(Errc::CalibrationGap, "no calibration for sensor '" + std::string(sensor_id) + "'");
}

EngineeringKnowledge reference_engineering_knowledge() {
  using plant::SensorType;
  EngineeringKnowledge ek;
  ek.devices = {
      {"PLC1", "Conveyor PLC", "PLC", "Siemens", "S7-1200", {"IEC 61131-3"},
       {{"ip", std::string("192.168.1.10")},
        {"mac", std::string("00:1d:9c:c7:b0:01")},
        {"channels", std::string("AI0,DI0,DO0")},
        {"control_logic", std::string("conveyor_belt.st")},
        {"belt_length", 20.0},
        {"object_length", 1.0},
        {"station_b_position", 10.0}}},
      {"HMI1", "Conveyor HMI", "HMI", "Siemens", "KTP700", {"IEC 62443"},
       {{"ip", std::string("192.168.1.11")}, {"mac", std::string("00:1d:9c:c7:b0:02")}}},
      {"PLC2", "Welding arm PLC", "PLC", "Siemens", "S7-1500", {"IEC 61131-3"},
       {{"ip", std::string("192.168.1.20")},
        {"mac", std::string("00:1d:9c:c7:b0:03")},
        {"channels", std::string("AI0,AI1,AI2,DO0")},
        {"control_logic", std::string("robotic_arm.st")},
        {"init_temp", 25.0}}},
      {"HMI2", "Welding arm HMI", "HMI", "Siemens", "KTP700", {"IEC 62443"},
       {{"ip", std::string("192.168.1.21")}, {"mac", std::string("00:1d:9c:c7:b0:04")}}},
  };
  ek.sensors = {
      {"sensor1", SensorType::Velocity, "PLC1", "units/s"},
      {"sensor2", SensorType::ObjectDetection, "PLC1", "bool"},
      {"sensor3", SensorType::Current, "PLC2", "A"},
      {"sensor4", SensorType::Pressure, "PLC2", "N"},
      {"sensor5", SensorType::Temperature, "PLC2", "degC"},
  };
  ek.topology = {
      {"HMI1", "PLC1"},    {"PLC1", "HMI1"},    {"HMI2", "PLC2"},    {"PLC2", "HMI2"},
      {"PLC1", "PLC2"},    {"sensor1", "PLC1"}, {"sensor2", "PLC1"}, {"sensor3", "PLC2"},
      {"sensor4", "PLC2"}, {"sensor5", "PLC2"},
  };
  ek.processes = {
      {"P-assembly", {"PLC1", "PLC2"}, {"spacing >= V*d", "weld duration = d"}},
  };
  return ek;
}

std::vector<CalibrationRecord> reference_calibration() {
  return {
      {"sensor1", 0.0, 5.0, 0.0, "ISO 9001 tachometer"},
      {"sensor2", 0.0, 1.0, 0.0, "IEC 60947-5-2 proximity"},
      {"sensor3", 0.0, 10.0, 0.0, "IEC 62135 current clamp"},
      {"sensor4", 0.0, 4.0, 0.0, "ISO 5183 force gauge"},
      {"sensor5", 20.0, 90.0, 0.0, "IEC 60584 thermocouple"},
  };
}

std::vector<DomainKnowledge> reference_domain_knowledge() {
  return {
      {"PLC1",
       {{0.0, {{"run_rate", 2.0}, {"status", std::string("on")}}, {{"velocity", 2.0}}, "commissioned"}},
       KnowledgeSource::Engineer},
      {"PLC2",
       {{0.0, {{"welds", std::int64_t{0}}, {"status", std::string("on")}},
         {{"current", 8.0}, {"pressure", 3.0}}, "electrodes replaced"}},
       KnowledgeSource::SupplyChain},
  };
}

plant::PlantConfig plant_config_from(const EngineeringKnowledge& ek) {
  plant::PlantConfig cfg;
  for (const auto& s : ek.sensors) cfg.sensors.push_back({s.sensor_id, s.sensor_type, s.asset_id});
  for (const auto& s : ek.sensors) {
    if (s.sensor_type == plant::SensorType::Velocity) {
      cfg.conveyor_asset = s.asset_id;
      break;
    }
  }
  for (const auto& s : ek.sensors) {
    if (s.sensor_type == plant::SensorType::Temperature) {
      cfg.arm_asset = s.asset_id;
      break;
    }
  }
  auto number_of = [](const ConfigMap& m, const char* key, double& out) {
    auto it = m.find(key);
    if (it == m.end()) return;
    if (const auto* d = std::get_if<double>(&it->second)) out = *d;
    if (const auto* i = std::get_if<std::int64_t>(&it->second)) out = static_cast<double>(*i);
  };
  for (const auto* id : {&cfg.conveyor_asset, &cfg.arm_asset}) {
    if (const auto* dev = ek.find_device(*id)) {
      number_of(dev->config, "belt_length", cfg.belt_length);
      number_of(dev->config, "object_length", cfg.object_length);
      number_of(dev->config, "station_b_position", cfg.station_b_position);
      number_of(dev->config, "init_temp", cfg.init_temp);
    }
  }
  return cfg;
}

}  // namespace tts::icm
