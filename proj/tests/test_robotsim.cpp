#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "rowpilot/fieldsim.hpp"
#include "rowpilot/robotsim.hpp"

using namespace rowpilot;
using namespace rowpilot::robotsim;
using Eigen::Vector2d;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

int count_outcome(const EpisodeConfig& cfg, int seeds, Outcome o) {
  int n = 0;
  for (int s = 1; s <= seeds; ++s) n += run_episode(cfg, s).outcome == o;
  return n;
}

}  // namespace

// ---------------------------------------------------------------- kinematics

TEST(Kinematics, EqualTracksDriveStraight) {
  RobotState s;
  s.heading = 0.3;
  const RobotState n = step_kinematics(s, {0.1, 0.1}, 2.0);
  EXPECT_NEAR(n.position.x(), 0.2 * std::cos(0.3), 1e-12);
  EXPECT_NEAR(n.position.y(), 0.2 * std::sin(0.3), 1e-12);
  EXPECT_DOUBLE_EQ(n.heading, 0.3);
}

TEST(Kinematics, OpposedTracksRotateInPlace) {
  RobotState s;
  s.position = {1.0, 2.0};
  const RobotState n = step_kinematics(s, {-0.09, 0.09}, 1.0);
  EXPECT_NEAR((n.position - s.position).norm(), 0.0, 1e-12);
  EXPECT_NEAR(n.heading, 2 * 0.09 / s.track_width, 1e-12);
}

TEST(Kinematics, ManyStepsMatchClosedFormArc) {
  RobotState s;
  const TrackCommand cmd{0.10, 0.14};
  for (int i = 0; i < 1000; ++i) s = step_kinematics(s, cmd, 0.01);
  const double v = 0.12, w = 0.04 / 0.18, T = 10.0;
  const double r = v / w;
  EXPECT_NEAR(s.position.x(), r * std::sin(w * T), 1e-6);
  EXPECT_NEAR(s.position.y(), r * (1 - std::cos(w * T)), 1e-6);
  EXPECT_NEAR(s.heading, w * T, 1e-9);
}

TEST(Kinematics, RejectsNonPositiveStep) {
  EXPECT_THROW(step_kinematics({}, {}, 0.0), std::invalid_argument);
}

TEST(Kinematics, WrapAngleRange) {
  for (double a = -20; a < 20; a += 0.37) {
    const double w = wrap_angle(a);
    EXPECT_GT(w, -kPi);
    EXPECT_LE(w, kPi);
    EXPECT_NEAR(std::remainder(a - w, 2 * kPi), 0.0, 1e-9);
  }
}

// ---------------------------------------------------------------- imu

TEST(Imu, CleanGyroTracksTruth) {
  ImuConfig c;
  ImuModel imu(c, 0.5);
  std::mt19937_64 rng(1);
  RobotState s;
  s.heading = 0.5;
  for (int i = 0; i < 500; ++i) {
    s = step_kinematics(s, {0.1, 0.12}, 0.05);
    EXPECT_NEAR(imu_read(s, imu, 0.05, i % 7 == 0, rng), s.heading, 1e-12);
  }
}

TEST(Imu, BiasIntegratesLinearly) {
  ImuConfig c;
  c.gyro_bias = 0.002;
  ImuModel imu(c, 0.0);
  std::mt19937_64 rng(1);
  RobotState s;
  for (int i = 0; i < 400; ++i) imu_read(s, imu, 0.05, false, rng);
  EXPECT_NEAR(imu.estimate, 0.002 * 20.0, 1e-12);
}

TEST(Imu, BumpsChangeDriftOnlyWhenEnabled) {
  std::mt19937_64 rng(3);
  RobotState s;
  ImuModel off(ImuConfig::nominal(), 0.0), on(ImuConfig::drifting(), 0.0);
  for (int i = 0; i < 50; ++i) {
    imu_read(s, off, 0.05, true, rng);
    imu_read(s, on, 0.05, true, rng);
  }
  EXPECT_EQ(off.drift_rate, 0.0);
  EXPECT_NE(on.drift_rate, 0.0);
  EXPECT_EQ(on.bumps, 50);
}

// ---------------------------------------------------------------- pid

TEST(PidTest, ZeroErrorGivesZeroOutput) {
  Pid pid;
  for (int i = 0; i < 10; ++i) EXPECT_EQ(pid.update(0.0, 0.05), 0.0);
}

TEST(PidTest, SettlesTenDegreeStep) {
  Pid pid;
  RobotState s;
  const double target = 10 * kDeg;
  for (int i = 0; i < 40; ++i) s = step_kinematics(s, pid_heading(pid, (target - s.heading) / kDeg, 0.05), 0.05);
  EXPECT_NEAR(s.heading, target, 0.5 * kDeg);
}

TEST(PidTest, IntegralFrozenWhileSaturated) {
  Pid pid;
  for (int i = 0; i < 200; ++i) {
    EXPECT_LE(std::abs(pid.update(90.0, 0.05)), pid.gains().max_output + 1e-12);
    EXPECT_TRUE(pid.saturated());
  }
  EXPECT_EQ(pid.integral(), 0.0);
  pid.reset();
  pid.update(1.0, 0.05);
  EXPECT_NEAR(pid.integral(), 0.05, 1e-12);
}

// ---------------------------------------------------------------- battery

TEST(Battery, VoltageLinearAndLowSlowsDown) {
  BatteryModel b({}, 1.0);
  EXPECT_DOUBLE_EQ(b.voltage(), 16.8);
  EXPECT_DOUBLE_EQ(b.cruise_speed(), 0.14);
  const double v0 = b.voltage();
  b.discharge(3600);
  const double v1 = b.voltage();
  b.discharge(3600);
  EXPECT_NEAR(v0 - v1, v1 - b.voltage(), 1e-9);
  BatteryModel low({}, 0.2);
  EXPECT_TRUE(low.low());
  EXPECT_DOUBLE_EQ(low.cruise_speed(), 0.09);
  const double before = low.state_of_charge();
  low.spray();
  EXPECT_LT(low.state_of_charge(), before);
  for (int i = 0; i < 1000; ++i) low.charge(10);
  EXPECT_TRUE(low.full());
}

// ---------------------------------------------------------------- mission logic

namespace {

MissionConfig mission_config() {
  MissionConfig c;
  c.row_end_window = 3;
  return c;
}

Odometry odo_at(double x, double y, double heading, double dist) { return {{x, y}, heading, dist}; }

}  // namespace

TEST(Mission, LegalTransitionTable) {
  EXPECT_TRUE(legal_transition(Phase::RowFollow, Phase::TurnA));
  EXPECT_TRUE(legal_transition(Phase::TurnA, Phase::NextRowEntry));
  EXPECT_TRUE(legal_transition(Phase::NextRowEntry, Phase::TurnB));
  EXPECT_TRUE(legal_transition(Phase::TurnB, Phase::RowFollow));
  EXPECT_TRUE(legal_transition(Phase::DockAlign, Phase::Ramp));
  EXPECT_FALSE(legal_transition(Phase::TurnA, Phase::DockAlign));
  EXPECT_FALSE(legal_transition(Phase::RowFollow, Phase::Ramp));
  EXPECT_FALSE(legal_transition(Phase::Done, Phase::RowFollow));
  EXPECT_FALSE(legal_transition(Phase::Charging, Phase::RowFollow));
}

TEST(Mission, SteadyRowFollowKeepsPhaseAndHeading) {
  const MissionConfig cfg = mission_config();
  const Odometry odo = odo_at(0, 0, kPi / 2, 0);
  MissionState m = start_mission(odo, {{0, -3.6}, -kPi / 2});
  Percepts p;
  p.vision_tick = true;
  p.target_px = Point2d(cfg.nav_camera.cx(), 170.0);
  p.green_area = 20000;
  for (int i = 0; i < 20; ++i) {
    auto r = mission_step(m, p, odo_at(0, 0.01 * i, kPi / 2, 0.01 * i), cfg, 0.14);
    m = r.state;
    ASSERT_EQ(m.phase, Phase::RowFollow);
    EXPECT_NEAR(r.directive.heading, kPi / 2, 1e-9);
    EXPECT_DOUBLE_EQ(r.directive.speed, 0.14);
  }
}

TEST(Mission, SteeringClampedAboutRowAxis) {
  const MissionConfig cfg = mission_config();
  const Odometry odo = odo_at(0, 0, kPi / 2, 0);
  MissionState m = start_mission(odo, {{0, -3.6}, -kPi / 2});
  Percepts p;
  p.vision_tick = true;
  p.target_px = Point2d(350.0, 200.0);  // far right
  const auto r = mission_step(m, p, odo, cfg, 0.14);
  EXPECT_NEAR(r.directive.heading, kPi / 2 - 5 * kDeg, 1e-9);
}

TEST(Mission, RowEndStartsNinetyDegreeTurn) {
  const MissionConfig cfg = mission_config();
  MissionState m = start_mission(odo_at(0, 0, kPi / 2, 0), {{0, -3.6}, -kPi / 2});
  Percepts p;
  p.vision_tick = true;
  Directive last;
  for (int i = 0; i < 3 && m.phase == Phase::RowFollow; ++i) {
    p.green_area = 100.0;
    auto r = mission_step(m, p, odo_at(0, 1.0 + 0.01 * i, kPi / 2, 1.0 + 0.01 * i), cfg, 0.14);
    m = r.state;
    last = r.directive;
  }
  EXPECT_EQ(m.phase, Phase::TurnA);
  EXPECT_EQ(m.rows_completed, 1);
  EXPECT_DOUBLE_EQ(std::abs(last.commanded_yaw_deg), 90.0);
}

TEST(Mission, RowEndIgnoredBeforeArming) {
  const MissionConfig cfg = mission_config();
  MissionState m = start_mission(odo_at(0, 0, kPi / 2, 0), {{0, -3.6}, -kPi / 2});
  Percepts p;
  p.vision_tick = true;
  p.green_area = 100.0;
  for (int i = 0; i < 5; ++i) m = mission_step(m, p, odo_at(0, 0.1, kPi / 2, 0.1), cfg, 0.14).state;
  EXPECT_EQ(m.phase, Phase::RowFollow);
}

TEST(Mission, RampCaptureWithinFunnelTolerance) {
  const MissionConfig cfg = mission_config();
  for (const double lateral : {0.0, 0.02, 0.03, -0.03, 0.031, -0.05}) {
    MissionState m = start_docking(odo_at(0, -1, kPi / 2, 0), {{0, 0}, kPi / 2});
    Percepts p;
    p.on_ramp = true;
    m = mission_step(m, p, odo_at(0, -0.8, kPi / 2, 0.2), cfg, 0.09).state;
    ASSERT_EQ(m.phase, Phase::Ramp);
    p.contact_lateral = lateral;
    m = mission_step(m, p, odo_at(0, -0.4, kPi / 2, 0.6), cfg, 0.09).state;
    if (std::abs(lateral) <= 0.03) {
      EXPECT_EQ(m.phase, Phase::Charging) << lateral;
      EXPECT_TRUE(m.dock_contact);
    } else {
      EXPECT_EQ(m.phase, Phase::Done) << lateral;
      EXPECT_EQ(m.outcome, Outcome::DockFailed);
    }
    EXPECT_DOUBLE_EQ(*m.final_lateral, lateral);
  }
}

TEST(Mission, DriveStraightHoldsHeading) {
  const MissionConfig cfg = mission_config();
  MissionState m = start_docking(odo_at(0, -2, 1.7, 0), {{0, 0}, kPi / 2});
  Percepts p;
  p.vision_tick = true;
  p.dock = DockObservation{};
  for (int i = 0; i < 5; ++i) {
    auto r = mission_step(m, p, odo_at(0, -2 + 0.01 * i, 1.7, 0.01 * i), cfg, 0.09);
    m = r.state;
    EXPECT_DOUBLE_EQ(r.directive.heading, 1.7);
  }
}

TEST(Mission, LocateStationFromLabelledDots) {
  fieldsim::DockConfig dock;
  MissionConfig cfg = mission_config();
  cfg.dock_camera = dock.camera;
  for (const double offset : {-0.3, 0.0, 0.2}) {
    for (const double distance : {1.0, 2.0}) {
      const auto labels = fieldsim::dock_labels(dock, distance, offset);
      dockdetect::DockResult res;
      for (const auto& l : labels) res.accepted.push_back({Point2d(l.cx, l.cy), l.r, 0.0});
      const auto obs = pattern_observation(res, dock.station);
      ASSERT_TRUE(obs);
      // Lens at `offset` right of the axis, `distance` in front, facing +y.
      const Vector2d lens(offset, -distance);
      const Odometry odo{lens - Vector2d(0, cfg.robot.camera_ahead), kPi / 2, 0};
      const auto fix = locate_station(*obs, odo, cfg);
      ASSERT_TRUE(fix);
      EXPECT_NEAR(fix->first.x(), 0.0, 0.02 * distance);
      EXPECT_NEAR(fix->first.y(), 0.0, 0.05 * distance);
    }
  }
}

TEST(Mission, PatternRejectsUnevenTriples) {
  dockdetect::DockResult res;
  res.accepted = {{Point2d(100, 120), 10, 0}, {Point2d(127, 120), 10, 0}, {Point2d(200, 120), 10, 0}};
  EXPECT_FALSE(pattern_observation(res));
  res.accepted[2].center.x() = 154;
  EXPECT_TRUE(pattern_observation(res));
}

// ---------------------------------------------------------------- spraying

TEST(Spray, NoHitsNoEvents) {
  std::mt19937_64 rng(1);
  EXPECT_TRUE(spray_trigger({}, {}, rng).empty());
}

TEST(Spray, SingleWeedZeroDelayFiresOnce) {
  SprayConfig cfg;
  cfg.delay = 0;
  cfg.jitter = 0;
  cfg.measurement_sigma = 0.0065;
  std::mt19937_64 rng(1);
  std::vector<fieldsim::Weed> weeds{{Vector2d(0.6, 0.0), 0.01}};
  WeedOracle oracle(weeds, cfg);
  Sprayer sprayer(cfg);
  RobotState s;
  int events = 0;
  for (int k = 0; k < 200; ++k) {
    s.position.x() = 0.14 * 0.05 * k;
    for (const auto& h : oracle.observe(s, {}, 0.05 * k, rng)) sprayer.on_hit(h, rng);
    events += static_cast<int>(sprayer.fire_due(0.05 * k).size());
  }
  events += static_cast<int>(sprayer.flush().size());
  EXPECT_EQ(events, 1);
}

TEST(Spray, RepeatHitWhilePendingDuplicates) {
  SprayConfig cfg;
  cfg.jitter = 0;
  std::mt19937_64 rng(1);
  const std::vector<WeedHit> hits{{0.0, 7}, {0.2, 7}, {1.0, 7}};
  const auto ev = spray_trigger(hits, cfg, rng);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_FALSE(ev[0].duplicate);
  EXPECT_TRUE(ev[1].duplicate);
  EXPECT_NEAR(ev[0].time, 0.4, 1e-12);
}

TEST(Spray, DuplicateRateBand) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const double rate = duplicate_rate(500, 0.14, 0.05, SprayConfig{}, seed);
    EXPECT_GT(rate, 0.10);
    EXPECT_LT(rate, 0.25);
  }
}

// ---------------------------------------------------------------- collisions

TEST(Collision, SeparatingAxisIsSymmetric) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  int hits = 0;
  for (int i = 0; i < 2000; ++i) {
    const double a = u(rng) * kPi, b = u(rng) * kPi;
    const Obb p{{u(rng), u(rng)}, {std::cos(a), std::sin(a)}, 0.3 + 0.2 * u(rng), 0.1 + 0.05 * u(rng)};
    const Obb q{{u(rng), u(rng)}, {std::cos(b), std::sin(b)}, 0.3 + 0.2 * u(rng), 0.1 + 0.05 * u(rng)};
    EXPECT_EQ(overlaps(p, q), overlaps(q, p));
    hits += overlaps(p, q);
  }
  EXPECT_GT(hits, 100);
  EXPECT_LT(hits, 1900);
}

TEST(Collision, AisleCentreClearsBands) {
  fieldsim::FieldConfig f;
  const auto bands = crop_bands(f);
  RobotState s;
  s.position = {f.aisle_center_x(2, 1.5), 1.5};
  s.heading = kPi / 2;
  EXPECT_FALSE(colliding_band(footprint(s, {}), bands));
  s.position.x() += 0.03;
  EXPECT_TRUE(colliding_band(footprint(s, {}), bands));
  s.position.x() -= 0.03;
  s.heading += 8 * kDeg;
  EXPECT_TRUE(colliding_band(footprint(s, {}), bands));
}

TEST(Collision, CurvedBandsFollowCropline) {
  fieldsim::FieldConfig f;
  f.curvature = 0.05;
  const auto bands = crop_bands(f);
  for (const auto& b : bands) {
    const double x = std::round(b.center.x() / f.pitch() - 0.5 * f.curvature * b.center.y() * b.center.y() / f.pitch());
    EXPECT_NEAR(b.center.x(), f.cropline_x(static_cast<int>(x), b.center.y()), 1e-9);
  }
}

// ---------------------------------------------------------------- episodes

TEST(Episode, DockingFromThreeMetres) {
  EpisodeConfig cfg;
  cfg.scenario = Scenario::Docking;
  cfg.initial_charge = 0.2;
  const auto log = run_episode(cfg, 11);
  EXPECT_EQ(log.outcome, Outcome::Docked);
  EXPECT_TRUE(log.dock_success);
  // Success implies contact within the funnel.
  EXPECT_TRUE(log.dock_contact);
  EXPECT_LE(std::abs(*log.final_lateral), cfg.mission.funnel_tolerance);
}

TEST(Episode, DockingFarOffsetStillDocks) {
  EpisodeConfig cfg;
  cfg.scenario = Scenario::Docking;
  cfg.initial_charge = 0.2;
  cfg.dock_offset = 0.5;
  EXPECT_EQ(run_episode(cfg, 2).outcome, Outcome::Docked);
  cfg.dock_offset = -0.5;
  EXPECT_EQ(run_episode(cfg, 3).outcome, Outcome::Docked);
}

TEST(Episode, SameSeedSameBytes) {
  EpisodeConfig cfg;
  cfg.scenario = Scenario::Docking;
  cfg.initial_charge = 0.2;
  EXPECT_EQ(to_jsonl(run_episode(cfg, 5)), to_jsonl(run_episode(cfg, 5)));
  EXPECT_NE(summary_json(run_episode(cfg, 5)), summary_json(run_episode(cfg, 6)));
}

TEST(Episode, NominalFieldFullCoverageNoCollisions) {
  EpisodeConfig cfg;
  const auto log = run_episode(cfg, 1);
  EXPECT_EQ(log.outcome, Outcome::Completed);
  EXPECT_EQ(log.rows_completed, 6);
  EXPECT_DOUBLE_EQ(log.coverage, 1.0);
  EXPECT_TRUE(log.collisions.empty());

  // Boustrophedon: turn directions alternate, starting clockwise.
  ASSERT_EQ(log.turns.size(), 5u);
  for (std::size_t i = 0; i < log.turns.size(); ++i) EXPECT_EQ(log.turns[i], i % 2 ? 1 : -1);

  // Time is the sum of the logged steps.
  double t = 0;
  for (const auto& r : log.ticks) t += r.dt;
  EXPECT_DOUBLE_EQ(t, log.sim_time);
  EXPECT_DOUBLE_EQ(log.ticks.back().t, log.sim_time);

  // Every phase change is a legal one.
  for (std::size_t i = 1; i < log.phases.size(); ++i)
    EXPECT_TRUE(legal_transition(log.phases[i - 1].second, log.phases[i].second));

  // Each row visits a distinct aisle.
  std::set<long> aisles;
  for (std::size_t i = 0; i < log.phases.size(); ++i)
    if (log.phases[i].second == Phase::RowFollow) {
      const auto it = std::lower_bound(log.ticks.begin(), log.ticks.end(), log.phases[i].first + 5.0,
                                       [](const TickRecord& r, double t) { return r.t < t; });
      aisles.insert(std::lround(it->state.position.x() / cfg.field.pitch() - 0.5));
    }
  EXPECT_EQ(aisles.size(), 6u);
  EXPECT_GT(log.sprays.size(), 0u);
}

TEST(Episode, DriftFailsLongRowsNotShortOnes) {
  EpisodeConfig cfg;
  cfg.imu = ImuConfig::drifting();
  cfg.mission.rows = 1;
  cfg.vision_period = 0.5;
  cfg.field.row_length = 3.0;
  const int short_ok = count_outcome(cfg, 10, Outcome::Completed);
  cfg.field.row_length = 6.0;
  const int long_hit = count_outcome(cfg, 10, Outcome::Collision);
  EXPECT_GE(short_ok, 8);
  EXPECT_GE(long_hit, 5);
}

TEST(Episode, LoggedCollisionsRecheck) {
  EpisodeConfig cfg;
  cfg.imu = ImuConfig::drifting();
  cfg.vision_period = 0.5;
  const auto bands = crop_bands(cfg.field);
  int seen = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto log = run_episode(cfg, seed);
    for (const auto& c : log.collisions) {
      ++seen;
      EXPECT_TRUE(overlaps(footprint(c.state, cfg.robot), bands[c.band]));
    }
    // Collision-free ticks before the first contact really are clear.
    for (const auto& r : log.ticks) {
      if (!log.collisions.empty() && r.t >= log.collisions.front().t) break;
      EXPECT_FALSE(colliding_band(footprint(r.state, cfg.robot), bands));
    }
  }
  EXPECT_GT(seen, 0);
}

TEST(Episode, LowBatteryReturnsChargesAndResumes) {
  EpisodeConfig cfg;
  cfg.vision_period = 0.5;
  cfg.initial_charge = 0.224;
  cfg.time_cap = 20000;
  const auto log = run_episode(cfg, 1);
  std::vector<Phase> seq;
  for (const auto& [t, p] : log.phases)
    if (seq.empty() || seq.back() != p) seq.push_back(p);
  const auto has = [&](Phase p) { return std::find(seq.begin(), seq.end(), p) != seq.end(); };
  EXPECT_TRUE(has(Phase::ReturnHome));
  EXPECT_TRUE(has(Phase::Charging));
  EXPECT_TRUE(has(Phase::Resume));
  EXPECT_EQ(log.outcome, Outcome::Completed);
  EXPECT_EQ(log.rows_completed, 6);
  EXPECT_TRUE(log.collisions.empty());
}

TEST(Episode, ConfigValidation) {
  EpisodeConfig cfg;
  cfg.dt = 0;
  EXPECT_THROW(run_episode(cfg, 1), std::invalid_argument);
  cfg = {};
  cfg.mission.rows = 9;
  EXPECT_THROW(run_episode(cfg, 1), std::invalid_argument);
}

TEST(Episode, JsonlEndsWithSummary) {
  EpisodeConfig cfg;
  cfg.scenario = Scenario::Docking;
  cfg.initial_charge = 0.2;
  const auto log = run_episode(cfg, 4);
  const std::string text = to_jsonl(log);
  const auto last = text.substr(text.rfind('\n', text.size() - 2) + 1);
  EXPECT_EQ(last, summary_json(log) + "\n");
  EXPECT_NE(text.find("\"type\":\"tick\""), std::string::npos);
}
