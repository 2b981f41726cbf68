// SPDX-License-Identifier: Apache-2.0
#include "tts/icm/spec_file.hpp"

#include <cmath>
#include <set>

#include "json.hpp"
#include "tts/common/error.hpp"

namespace tts::icm {

using ojson = nlohmann::ordered_json;

namespace {

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  throw Error(Errc::Malformed, path + ": " + what);
}

void only_keys(const ojson& j, const std::string& path, std::initializer_list<const char*> allowed,
               std::initializer_list<const char*> required) {
  if (!j.is_object()) bad(path, "expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.contains(k)) bad(path, "unknown key '" + k + "'");
  }
  for (auto* r : required) {
    if (!j.contains(r)) bad(path, std::string("missing key '") + r + "'");
  }
}

std::string str(const ojson& j, const char* key, const std::string& path, bool required = true) {
  if (!j.contains(key)) {
    if (required) bad(path, std::string("missing key '") + key + "'");
    return {};
  }
  if (!j[key].is_string()) bad(path + "." + key, "expected a string");
  return j[key].get<std::string>();
}

double num(const ojson& j, const char* key, const std::string& path, bool required = true) {
  if (!j.contains(key)) {
    if (required) bad(path, std::string("missing key '") + key + "'");
    return 0.0;
  }
  if (!j[key].is_number()) bad(path + "." + key, "expected a number");
  double v = j[key].get<double>();
  if (!std::isfinite(v)) bad(path + "." + key, "not finite");
  return v;
}

std::vector<std::string> strings(const ojson& j, const char* key, const std::string& path) {
  std::vector<std::string> out;
  if (!j.contains(key)) return out;
  if (!j[key].is_array()) bad(path + "." + key, "expected an array");
  for (const auto& s : j[key]) {
    if (!s.is_string()) bad(path + "." + key, "expected strings");
    out.push_back(s.get<std::string>());
  }
  return out;
}

const ojson& array(const ojson& j, const char* key, const std::string& path) {
  static const ojson kEmpty = ojson::array();
  if (!j.contains(key)) return kEmpty;
  if (!j[key].is_array()) bad(path + "." + key, "expected an array");
  return j[key];
}

ConfigMap config_map(const ojson& j, const std::string& path) {
  ConfigMap out;
  if (j.is_null()) return out;
  if (!j.is_object()) bad(path, "expected an object of scalars");
  for (const auto& [k, v] : j.items()) {
    if (v.is_boolean()) {
      out[k] = v.get<bool>();
    } else if (v.is_number_integer()) {
      out[k] = v.get<std::int64_t>();
    } else if (v.is_number()) {
      out[k] = v.get<double>();
    } else if (v.is_string()) {
      out[k] = v.get<std::string>();
    } else {
      bad(path + "." + k, "configuration values must be scalars");
    }
  }
  return out;
}

ojson config_json(const ConfigMap& m) {
  ojson j = ojson::object();
  for (const auto& [k, v] : m) {
    std::visit([&](const auto& x) { j[k] = x; }, v);
  }
  return j;
}

}  // namespace

SpecBundle parse_spec(std::string_view json_text) {
  ojson root;
  try {
    root = ojson::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::Malformed, std::string("spec is not valid JSON: ") + e.what());
  }
  only_keys(root, "$",
            {"devices", "sensors", "topology", "processes", "calibration", "domain_knowledge"},
            {"devices", "sensors"});
  SpecBundle b;
  const auto& devices = array(root, "devices", "$");
  for (std::size_t i = 0; i < devices.size(); ++i) {
    auto path = "$.devices[" + std::to_string(i) + "]";
    const auto& d = devices[i];
    only_keys(d, path, {"asset_id", "name", "type", "make", "model", "standards", "config"},
              {"asset_id", "type"});
    DeviceSpec dev;
    dev.asset_id = str(d, "asset_id", path);
    dev.name = str(d, "name", path, false);
    dev.type = str(d, "type", path);
    dev.make = str(d, "make", path, false);
    dev.model = str(d, "model", path, false);
    dev.standards = strings(d, "standards", path);
    if (d.contains("config")) dev.config = config_map(d["config"], path + ".config");
    b.ek.devices.push_back(std::move(dev));
  }
  const auto& sensors = array(root, "sensors", "$");
  for (std::size_t i = 0; i < sensors.size(); ++i) {
    auto path = "$.sensors[" + std::to_string(i) + "]";
    const auto& s = sensors[i];
    only_keys(s, path, {"sensor_id", "type", "asset_id", "units"}, {"sensor_id", "type", "asset_id"});
    SensorSpec spec;
    spec.sensor_id = str(s, "sensor_id", path);
    try {
      spec.sensor_type = plant::sensor_type_from_string(str(s, "type", path));
    } catch (const Error&) {
      bad(path + ".type", "unknown sensor type");
    }
    spec.asset_id = str(s, "asset_id", path);
    spec.units = str(s, "units", path, false);
    b.ek.sensors.push_back(std::move(spec));
  }
  const auto& topology = array(root, "topology", "$");
  for (std::size_t i = 0; i < topology.size(); ++i) {
    auto path = "$.topology[" + std::to_string(i) + "]";
    only_keys(topology[i], path, {"from", "to"}, {"from", "to"});
    b.ek.topology.push_back({str(topology[i], "from", path), str(topology[i], "to", path)});
  }
  const auto& processes = array(root, "processes", "$");
  for (std::size_t i = 0; i < processes.size(); ++i) {
    auto path = "$.processes[" + std::to_string(i) + "]";
    const auto& p = processes[i];
    only_keys(p, path, {"process_id", "steps", "constraints"}, {"process_id", "steps"});
    b.ek.processes.push_back(
        {str(p, "process_id", path), strings(p, "steps", path), strings(p, "constraints", path)});
  }
  const auto& calibration = array(root, "calibration", "$");
  for (std::size_t i = 0; i < calibration.size(); ++i) {
    auto path = "$.calibration[" + std::to_string(i) + "]";
    const auto& c = calibration[i];
    only_keys(c, path, {"sensor_id", "tau_min", "tau_max", "calibrated_at", "standard_ref"},
              {"sensor_id", "tau_min", "tau_max"});
    b.calibration.push_back({str(c, "sensor_id", path), num(c, "tau_min", path),
                             num(c, "tau_max", path), num(c, "calibrated_at", path, false),
                             str(c, "standard_ref", path, false)});
  }
  const auto& dk = array(root, "domain_knowledge", "$");
  for (std::size_t i = 0; i < dk.size(); ++i) {
    auto path = "$.domain_knowledge[" + std::to_string(i) + "]";
    const auto& k = dk[i];
    only_keys(k, path, {"asset_id", "source", "history"}, {"asset_id"});
    DomainKnowledge d;
    d.asset_id = str(k, "asset_id", path);
    if (k.contains("source")) {
      try {
        d.source = knowledge_source_from_string(str(k, "source", path));
      } catch (const Error&) {
        bad(path + ".source", "unknown source");
      }
    }
    const auto& history = array(k, "history", path);
    for (std::size_t h = 0; h < history.size(); ++h) {
      auto hpath = path + ".history[" + std::to_string(h) + "]";
      const auto& e = history[h];
      only_keys(e, hpath, {"timestamp", "status", "config", "note"}, {"timestamp"});
      HistoryEntry entry;
      entry.timestamp = num(e, "timestamp", hpath);
      if (e.contains("status")) entry.status = config_map(e["status"], hpath + ".status");
      if (e.contains("config")) entry.config = config_map(e["config"], hpath + ".config");
      entry.note = str(e, "note", hpath, false);
      d.history.push_back(std::move(entry));
    }
    b.domain_knowledge.push_back(std::move(d));
  }
  return b;
}

std::string dump_spec(const SpecBundle& b) {
  ojson root;
  ojson devices = ojson::array();
  for (const auto& d : b.ek.devices) {
    devices.push_back(ojson{{"asset_id", d.asset_id},
                            {"name", d.name},
                            {"type", d.type},
                            {"make", d.make},
                            {"model", d.model},
                            {"standards", d.standards},
                            {"config", config_json(d.config)}});
  }
  root["devices"] = std::move(devices);
  ojson sensors = ojson::array();
  for (const auto& s : b.ek.sensors) {
    sensors.push_back(ojson{{"sensor_id", s.sensor_id},
                            {"type", std::string(plant::to_string(s.sensor_type))},
                            {"asset_id", s.asset_id},
                            {"units", s.units}});
  }
  root["sensors"] = std::move(sensors);
  ojson topology = ojson::array();
  for (const auto& l : b.ek.topology) topology.push_back(ojson{{"from", l.from}, {"to", l.to}});
  root["topology"] = std::move(topology);
  ojson processes = ojson::array();
  for (const auto& p : b.ek.processes) {
    processes.push_back(
        ojson{{"process_id", p.process_id}, {"steps", p.steps}, {"constraints", p.constraints}});
  }
  root["processes"] = std::move(processes);
  ojson calibration = ojson::array();
  for (const auto& c : b.calibration) {
    calibration.push_back(ojson{{"sensor_id", c.sensor_id},
                                {"tau_min", c.tau_min},
                                {"tau_max", c.tau_max},
                                {"calibrated_at", c.calibrated_at},
                                {"standard_ref", c.standard_ref}});
  }
  root["calibration"] = std::move(calibration);
  ojson dk = ojson::array();
  for (const auto& d : b.domain_knowledge) {
    ojson history = ojson::array();
    for (const auto& h : d.history) {
      history.push_back(ojson{{"timestamp", h.timestamp},
                              {"status", config_json(h.status)},
                              {"config", config_json(h.config)},
                              {"note", h.note}});
    }
    dk.push_back(ojson{{"asset_id", d.asset_id},
                       {"source", std::string(to_string(d.source))},
                       {"history", std::move(history)}});
  }
  root["domain_knowledge"] = std::move(dk);
  return root.dump(2) + "\n";
}

SpecBundle reference_bundle() {
  return {reference_engineering_knowledge(), reference_calibration(), reference_domain_knowledge()};
}

}  // namespace tts::icm
