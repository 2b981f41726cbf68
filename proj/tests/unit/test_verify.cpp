// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <chrono>
#include <cmath>

#include "tts/common/error.hpp"
#include "tts/verify/verify.hpp"

using namespace tts;
using namespace tts::verify;

namespace {

plant::Trace nominal_trace(std::int64_t ticks = 500) {
  ExploreModel m;
  auto cfg = m.plant_config();
  plant::Plant p(cfg);
  auto schedule = plant::reference_schedule(cfg, 2.0, 8.0, 3.0, 30, ticks);
  return plant::simulate(p, p.initial_state(), schedule, {}, ticks).trace;
}

const PropertyId kAll[] = {PropertyId::P1_Time, PropertyId::P2_Temperature, PropertyId::P3_Velocity};

// Exhaustive reference: every schedule over the tiny grid, judged by check_trace.
// Returns the earliest violation tick or -1.
std::int64_t brute_force(const ExploreModel& m, std::int64_t k, const PropertySpec& prop, int points) {
  auto cfg = m.plant_config();
  plant::Plant p(cfg);
  std::int64_t best = -1;
  bool conveyor = prop.id == PropertyId::P3_Velocity;
  std::vector<std::vector<plant::ActuatorCommand>> setpoints;
  if (conveyor) {
    for (double v : grid(m.config.tau_v, points)) {
      setpoints.push_back({{cfg.motor_actuator, plant::CommandKind::SetVelocity, v},
                           {cfg.motor_actuator, plant::CommandKind::MotorOn, 0}});
    }
  } else {
    for (double c : grid(m.config.tau_c, points)) {
      for (double pr : grid(m.config.tau_p, points)) {
        setpoints.push_back({{cfg.arm_actuator, plant::CommandKind::ArmOn, 0},
                             {cfg.arm_actuator, plant::CommandKind::SetCurrent, c},
                             {cfg.arm_actuator, plant::CommandKind::SetPressure, pr}});
      }
    }
  }
  const auto delay = static_cast<std::int64_t>(std::ceil(m.config.d / m.config.dt - 1e-9));
  for (const auto& sp : setpoints) {
    for (std::uint32_t mask = 0; mask < (1u << k); ++mask) {
      plant::Schedule s;
      s.commands[0] = sp;
      std::int64_t last = -1000;
      bool ok = true;
      for (std::int64_t t = 0; t < k; ++t) {
        if (!(mask & (1u << t))) continue;
        if (conveyor) {
          if (t - last < delay) ok = false;
          last = t;
          s.loads.insert(t);
        } else {
          s.commands[t].push_back({cfg.arm_actuator, plant::CommandKind::StartWeld, 0});
        }
      }
      if (!ok) continue;
      auto trace = plant::simulate(p, p.initial_state(), s, {}, k).trace;
      auto v = check_trace(trace, prop);
      if (v.sat() && (best < 0 || v.counterexample->violation_tick < best)) {
        best = v.counterexample->violation_tick;
      }
    }
  }
  return best;
}

}  // namespace

TEST_CASE("property names") {
  CHECK(property_from_string("P1") == PropertyId::P1_Time);
  CHECK(property_from_string("P2_Temperature") == PropertyId::P2_Temperature);
  CHECK(property_from_string("P3") == PropertyId::P3_Velocity);
  CHECK_THROWS_AS(property_from_string("P4"), Error);
  CHECK_THROWS_AS(PropertySpec::time(0).validate(), Error);
  CHECK_THROWS_AS(PropertySpec::temperature({5, 1}).validate(), Error);
  auto p = PropertySpec::from_config(PropertyId::P3_Velocity, twin::TwinConfig{});
  CHECK(p.bounds == twin::Bounds{1, 5});
  CHECK(grid({1, 5}, 5) == std::vector<double>{1, 2, 3, 4, 5});
  CHECK(grid({2, 2}, 5) == std::vector<double>{2});
}

TEST_CASE("check_trace: a nominal run satisfies every property") {
  auto trace = nominal_trace();
  twin::TwinConfig c;
  for (auto id : kAll) {
    auto v = check_trace(trace, PropertySpec::from_config(id, c));
    CHECK(v.result == Result::Unsat);
    CHECK(v.explored_states == trace.size());
    CHECK_FALSE(v.counterexample);
  }
}

TEST_CASE("check_trace: a stretched weld violates P1 at its end") {
  auto trace = nominal_trace(200);
  const double dt = 0.1;
  std::optional<std::size_t> done;
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i - 1].arm.task_status == plant::TaskStatus::Welding &&
        trace[i].arm.task_status == plant::TaskStatus::Done) {
      done = i;
      break;
    }
  }
  REQUIRE(done);
  for (std::size_t i = 0; i < *done; ++i) {
    if (trace[i].weld_started_at) *trace[i].weld_started_at -= 2 * dt;
  }
  auto v = check_trace(trace, PropertySpec::time(3.0));
  REQUIRE(v.sat());
  CHECK(v.counterexample->violation_tick == trace[*done].tick);
  // One dt of slack is tolerated.
  auto one = nominal_trace(200);
  for (std::size_t i = 0; i < *done; ++i) {
    if (one[i].weld_started_at) *one[i].weld_started_at -= dt;
  }
  CHECK_FALSE(check_trace(one, PropertySpec::time(3.0)).sat());
}

TEST_CASE("check_trace: the breach run violates P2 at the oracle tick") {
  ExploreModel m;
  m.config.tau_t = {20, 40};
  auto cfg = m.plant_config();
  plant::Plant p(cfg);
  plant::Schedule s;
  s.commands[0] = {{cfg.arm_actuator, plant::CommandKind::ArmOn, 0},
                   {cfg.arm_actuator, plant::CommandKind::SetCurrent, 10},
                   {cfg.arm_actuator, plant::CommandKind::SetPressure, 4},
                   {cfg.arm_actuator, plant::CommandKind::StartWeld, 0}};
  auto trace = plant::simulate(p, p.initial_state(), s, {}, 40).trace;
  auto v = check_trace(trace, PropertySpec::temperature({20, 40}));
  REQUIRE(v.sat());
  // 25 + n * 0.5 * 10 * 4 * 0.1 > 40 first at n = 8.
  CHECK(v.counterexample->violation_tick == 8);
}

TEST_CASE("check_trace: missing signals and empty traces") {
  auto trace = nominal_trace(10);
  for (auto& r : trace) r.readings.clear();
  CHECK_THROWS_AS(check_trace(trace, PropertySpec::temperature({20, 90})), Error);
  CHECK_THROWS_AS(check_trace(trace, PropertySpec::velocity({1, 5})), Error);
  CHECK_NOTHROW(check_trace(trace, PropertySpec::time(3)));
  CHECK_FALSE(check_trace({}, PropertySpec::velocity({1, 5})).sat());
}

TEST_CASE("explorer: nominal reference config is unsat at k = 50") {
  ExploreModel m;
  for (auto id : kAll) {
    auto start = std::chrono::steady_clock::now();
    auto v = bounded_explore(m, 50, PropertySpec::from_config(id, m.config));
    auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CAPTURE(to_string(id));
    CHECK(v.result == Result::Unsat);
    CHECK(v.explored_states > 50);
    CHECK(v.bound_k == 50);
    CHECK(secs < 60.0);
  }
}

TEST_CASE("explorer: k_heat sabotage makes P2 sat with a replayable path") {
  ExploreModel m;
  m.config.k_heat *= 10;
  auto v = bounded_explore(m, 50, PropertySpec::temperature(m.config.tau_t));
  REQUIRE(v.sat());
  // Oracle: the earliest breach over the grid, and the first (C, P) in
  // ascending order that reaches it.
  std::int64_t best_n = 0;
  double best_c = 0;
  double best_p = 0;
  for (double c : grid(m.config.tau_c, 5)) {
    for (double p : grid(m.config.tau_p, 5)) {
      for (std::int64_t n = 1; n <= 30; ++n) {
        if (25 + static_cast<double>(n) * m.config.k_heat * c * p * m.config.dt > m.config.tau_t.max) {
          if (best_n == 0 || n < best_n) {
            best_n = n;
            best_c = c;
            best_p = p;
          }
          break;
        }
      }
    }
  }
  CHECK(v.counterexample->violation_tick == best_n);
  const auto& first = v.counterexample->schedule.commands.at(0);
  CHECK(first[1].value == best_c);
  CHECK(first[2].value == best_p);
  auto trace = replay(m, v.counterexample->schedule, v.counterexample->violation_tick);
  auto check = check_trace(trace, PropertySpec::temperature(m.config.tau_t));
  REQUIRE(check.sat());
  CHECK(check.counterexample->violation_tick == v.counterexample->violation_tick);
  CHECK(trace.back().arm.object_temp > m.config.tau_t.max);
}

TEST_CASE("explorer: widening tau_v at the plant makes P3 sat") {
  ExploreModel m;
  auto rule = PropertySpec::velocity(m.config.tau_v);
  m.config.tau_v = {1, 8};
  auto v = bounded_explore(m, 50, rule);
  REQUIRE(v.sat());
  CHECK(v.counterexample->violation_tick == 1);
  auto trace = replay(m, v.counterexample->schedule, 5);
  auto check = check_trace(trace, rule);
  REQUIRE(check.sat());
  CHECK(check.counterexample->violation_tick == 1);
  CHECK(trace[0].velocity == doctest::Approx(6.25));
}

TEST_CASE("explorer: no enabled inputs keeps the initial state safe") {
  ExploreModel m;
  ExploreOptions opts;
  opts.inputs_enabled = false;
  for (auto id : kAll) CHECK_FALSE(bounded_explore(m, 1, PropertySpec::from_config(id, m.config), opts).sat());
}

TEST_CASE("explorer: argument and budget errors") {
  ExploreModel m;
  try {
    bounded_explore(m, 0, PropertySpec::time(3));
    FAIL("expected InvalidArgument");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvalidArgument);
  }
  ExploreOptions tiny;
  tiny.max_states = 100;
  try {
    bounded_explore(m, 50, PropertySpec::temperature(m.config.tau_t), tiny);
    FAIL("expected BudgetExceeded");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::BudgetExceeded);
  }
}

TEST_CASE("explorer agrees with brute force on tiny grids") {
  ExploreModel m;
  m.config.d = 0.3;
  m.config.k_heat = 20;
  m.config.tau_v = {1, 8};
  const std::int64_t k = 8;
  ExploreOptions opts;
  opts.grid_points = 2;
  const PropertySpec props[] = {
      PropertySpec::time(0.3),           PropertySpec::time(0.5),
      PropertySpec::temperature({20, 90}), PropertySpec::temperature({20, 200}),
      PropertySpec::temperature({20, 500}), PropertySpec::velocity({1, 5}),
      PropertySpec::velocity({1, 8})};
  for (const auto& prop : props) {
    CAPTURE(to_string(prop.id));
    CAPTURE(prop.bounds.max);
    auto v = bounded_explore(m, k, prop, opts);
    auto expected = brute_force(m, k, prop, 2);
    CHECK(v.sat() == (expected >= 0));
    if (v.sat()) CHECK(v.counterexample->violation_tick == expected);
  }
}

TEST_CASE("property: verdicts are monotone in k") {
  ExploreModel m;
  m.config.k_heat *= 4;
  auto prop = PropertySpec::temperature(m.config.tau_t);
  bool seen_sat = false;
  for (std::int64_t k = 1; k <= 30; ++k) {
    bool sat = bounded_explore(m, k, prop).sat();
    if (seen_sat) CHECK(sat);
    seen_sat = seen_sat || sat;
  }
  CHECK(seen_sat);
}

TEST_CASE("verdict and schedule export") {
  ExploreModel m;
  m.config.k_heat *= 10;
  auto v = bounded_explore(m, 50, PropertySpec::temperature(m.config.tau_t));
  auto json = to_json(v);
  CHECK(json.find("\"result\": \"sat\"") != std::string::npos);
  CHECK(json.find("elapsed_ms") == std::string::npos);
  CHECK(to_json(v, true).find("elapsed_ms") != std::string::npos);
  auto s = schedule_from_json(schedule_to_json(v.counterexample->schedule));
  CHECK(s.commands == v.counterexample->schedule.commands);
  CHECK(s.loads == v.counterexample->schedule.loads);
  CHECK_THROWS_AS(schedule_from_json("{}"), Error);
}
