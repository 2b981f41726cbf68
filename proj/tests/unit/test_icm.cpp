// SPDX-License-Identifier: Apache-2.0
#include <random>

#include "doctest.h"
#include "tts/common/error.hpp"
#include "tts/icm/consistency.hpp"
#include "tts/icm/knowledge.hpp"
#include "tts/icm/provenance.hpp"
#include "tts/icm/spec_file.hpp"

using namespace tts;
using namespace tts::icm;

namespace {

EngineeringKnowledge two_devices() {
  EngineeringKnowledge ek;
  ek.devices = {{"plc", "PLC", "PLC", "", "", {}, {}}, {"hmi", "HMI", "HMI", "", "", {}, {}}};
  ek.sensors = {{"s1", plant::SensorType::Velocity, "plc", "m/s"}};
  ek.topology = {{"hmi", "plc"}, {"s1", "plc"}};
  return ek;
}

plant::SensorReading reading(const std::string& id, double v) {
  return {id, plant::SensorType::Temperature, v, 0.0, "PLC2"};
}

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::Io;
}

const Principal kAnalyst{"analyst", {Role::SecurityAnalyst}};
const Principal kOperator{"operator", {Role::PlantOperator}};

}  // namespace

TEST_CASE("spec validation") {
  CHECK(validate_spec(two_devices()).ok());
  CHECK(validate_spec(reference_engineering_knowledge()).ok());

  auto dup = two_devices();
  dup.sensors.push_back({"s1", plant::SensorType::Current, "plc", "A"});
  auto r = validate_spec(dup);
  REQUIRE(r.findings.size() == 1);
  CHECK(r.findings[0].code == "DUP_ID");
  CHECK(r.findings[0].subject == "s1");

  auto dangling = two_devices();
  dangling.topology.push_back({"plc", "ghost"});
  r = validate_spec(dangling);
  REQUIRE(r.findings.size() == 1);
  CHECK(r.findings[0].code == "DANGLING_LINK");
  CHECK(r.findings[0].subject == "ghost");

  auto orphan = two_devices();
  orphan.sensors.push_back({"s2", plant::SensorType::Current, "nowhere", "A"});
  orphan.topology.push_back({"s2", "plc"});
  CHECK(validate_spec(orphan).count("ORPHAN_SENSOR") == 1);

  auto split = two_devices();
  split.devices.push_back({"island", "PLC", "PLC", "", "", {}, {}});
  r = validate_spec(split);
  REQUIRE(r.count("DISCONNECTED") == 1);
  CHECK(r.findings[0].subject == "island");
}

TEST_CASE("calibration and domain knowledge validation") {
  auto ek = reference_engineering_knowledge();
  CHECK(validate_calibration(ek, reference_calibration()).ok());
  CHECK(validate_domain_knowledge(ek, reference_domain_knowledge()).ok());

  auto cal = reference_calibration();
  cal.push_back({"sensor9", 0, 1, 0, ""});
  cal.push_back({"sensor1", 3, 2, 0, ""});
  auto r = validate_calibration(ek, cal);
  CHECK(r.count("UNKNOWN_SENSOR") == 1);
  CHECK(r.count("DUP_ID") == 1);
  CHECK(r.count("BAD_BOUNDS") == 1);

  auto dk = reference_domain_knowledge();
  dk[0].history.push_back({-5.0, {}, {}, "time travel"});
  CHECK(validate_domain_knowledge(ek, dk).count("NON_MONOTONE_HISTORY") == 1);

  CHECK(calibration_for(reference_calibration(), "sensor5").tau_max == 90.0);
  CHECK(code_of([] { calibration_for(reference_calibration(), "sensor7"); }) ==
        Errc::CalibrationGap);
}

TEST_CASE("consistency check examples") {
  CalibrationRecord c{"s", 0, 10, 0, ""};
  CHECK(consistency_check(reading("s", 5.0), c));
  CHECK(consistency_check(reading("s", 10.0), c));
  CHECK(consistency_check(reading("s", 0.0), c));
  CHECK_FALSE(consistency_check(reading("s", 10.0000001), c));
  CHECK_FALSE(consistency_check(reading("s", -1e-12), c));
  CHECK(code_of([&] { consistency_check(reading("t", 1.0), c); }) == Errc::SensorMismatch);
}

TEST_CASE("property: consistency check is the inclusive bounds test") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  std::uniform_int_distribution<int> pick(0, 3);
  for (int i = 0; i < 20000; ++i) {
    double a = u(rng), b = u(rng);
    double lo = std::min(a, b), hi = std::max(a, b);
    double v = u(rng);
    switch (pick(rng)) {
      case 0: v = lo; break;
      case 1: v = hi; break;
      default: break;
    }
    bool expected = !(v < lo) && !(v > hi);
    REQUIRE(consistency_check(reading("s", v), {"s", lo, hi, 0, ""}) == expected);
  }
}

TEST_CASE("provenance tuples carry exactly their fields") {
  auto ek = reference_engineering_knowledge();
  ConfigMap cfg{{"ip", std::string("10.0.0.1")}, {"channels", std::int64_t{4}}};
  auto rec = build_ek_provenance(ek, kAnalyst, "PLC1", "sensor1", cfg, 5.0);
  CHECK(rec.kind() == ProvenanceKind::EK);
  CHECK(std::get<EkProvenance>(rec.payload) == EkProvenance{"PLC1", "sensor1", cfg});
  CHECK(rec.author == "analyst");
  CHECK(rec.subject() == "prov/EK/PLC1/sensor1");

  plant::SensorReading r{"sensor1", plant::SensorType::Velocity, 2.0, 1.0, "PLC1"};
  CalibrationRecord cal{"sensor1", 0, 5, 0, ""};
  auto cv = build_cv_provenance(ek, kAnalyst, "PLC1", true, r, cal, 6.0);
  const auto& p = std::get<CvProvenance>(cv.payload);
  CHECK(p.asset_on);
  CHECK(p.tau_min == 0.0);
  CHECK(p.tau_max == 5.0);
  CHECK(p.reading_digest == reading_digest(r));

  CHECK(code_of([&] {
          build_process_provenance(ek, kOperator, "R-1", "(const pass)", "operator", "PLC1",
                                   "sensor1", {}, 0.0);
        }) == Errc::Unauthorized);
  CHECK(code_of([&] { build_ek_provenance(ek, kAnalyst, "PLC9", "sensor1", {}, 0.0); }) ==
        Errc::UnknownReference);
  CHECK(code_of([&] { build_ek_provenance(ek, kAnalyst, "PLC1", "sensor9", {}, 0.0); }) ==
        Errc::UnknownReference);
  CalibrationRecord other{"sensor2", 0, 1, 0, ""};
  CHECK(code_of([&] { build_cv_provenance(ek, kAnalyst, "PLC1", true, r, other, 0.0); }) ==
        Errc::SensorMismatch);
}

TEST_CASE("provenance canonical round trip") {
  auto ek = reference_engineering_knowledge();
  auto dk = reference_domain_knowledge();
  plant::SensorReading r{"sensor5", plant::SensorType::Temperature, 61.5, 3.0, "PLC2"};
  std::vector<ProvenanceRecord> records{
      build_process_provenance(ek, kAnalyst, "R-3", "(in-bounds sensor5 20 90)", "analyst",
                               "PLC2", "sensor5", {{"tau_t_max", 90.0}}, 1.0),
      build_ek_provenance(ek, kAnalyst, "PLC2", "sensor5", {{"flag", true}}, 2.0),
      build_cv_provenance(ek, kAnalyst, "PLC2", false, r, {"sensor5", 20, 90, 0, ""}, 3.0),
      build_dk_provenance(ek, kAnalyst, dk[1], {{"note", std::string("x")}}, 4.0),
  };
  for (const auto& rec : records) {
    auto bytes = encode(rec);
    auto back = decode_provenance(bytes);
    CHECK(back == rec);
    CHECK(encode(back) == bytes);
    auto longer = bytes;
    longer.push_back(0);
    CHECK(code_of([&] { decode_provenance(longer); }) == Errc::Malformed);
  }
  Bytes bogus{9};
  CHECK(code_of([&] { decode_provenance(bogus); }) == Errc::Malformed);
}

TEST_CASE("spec file round trip and strictness") {
  auto bundle = reference_bundle();
  auto text = dump_spec(bundle);
  auto parsed = parse_spec(text);
  CHECK(dump_spec(parsed) == text);
  CHECK(parsed.ek.digest() == bundle.ek.digest());
  CHECK(parsed.calibration == bundle.calibration);

  CHECK(code_of([] { parse_spec(R"({"devices":[],"sensors":[],"extra":1})"); }) ==
        Errc::Malformed);
  CHECK(code_of([] {
          parse_spec(R"({"devices":[{"asset_id":"a","type":"PLC","colour":"red"}],"sensors":[]})");
        }) == Errc::Malformed);
  CHECK(code_of([] { parse_spec("[1,2"); }) == Errc::Malformed);
  CHECK(code_of([] {
          parse_spec(R"({"devices":[],"sensors":[{"sensor_id":"s","type":"Smell","asset_id":"a"}]})");
        }) == Errc::Malformed);
}

TEST_CASE("plant registry derives from engineering knowledge") {
  auto cfg = plant_config_from(reference_engineering_knowledge());
  CHECK(cfg.sensors.size() == 5);
  CHECK(cfg.conveyor_asset == "PLC1");
  CHECK(cfg.arm_asset == "PLC2");
  CHECK(cfg.belt_length == 20.0);
  CHECK(cfg.station_b_position == 10.0);
  CHECK(cfg.init_temp == 25.0);
  CHECK_NOTHROW(cfg.validate());
}
