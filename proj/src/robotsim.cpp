#include "rowpilot/robotsim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "rowpilot/errors.hpp"
#include "rowpilot/imgcore.hpp"

namespace rowpilot::robotsim {

using Eigen::Vector2d;
using json = nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

Vector2d unit(double heading) { return {std::cos(heading), std::sin(heading)}; }

// Heading-continuous target: the representative of `desired` nearest to `current`.
double near_angle(double current, double desired) { return current + wrap_angle(desired - current); }

}  // namespace

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a <= 0.0) a += 2.0 * kPi;
  return a - kPi;
}

// ---------------------------------------------------------------- kinematics

RobotState step_kinematics(const RobotState& s, TrackCommand cmd, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (!(s.track_width > 0.0)) throw std::invalid_argument("track width must be positive");
  RobotState out = s;
  const double v = 0.5 * (cmd.left + cmd.right);
  const double w = (cmd.right - cmd.left) / s.track_width;
  const double dth = w * dt;
  if (std::abs(dth) < 1e-12) {
    out.position += v * dt * unit(s.heading);
  } else {
    const double r = v / w;
    const double th1 = s.heading + dth;
    out.position.x() += r * (std::sin(th1) - std::sin(s.heading));
    out.position.y() -= r * (std::cos(th1) - std::cos(s.heading));
  }
  out.heading = s.heading + dth;
  out.speed = v;
  return out;
}

// ---------------------------------------------------------------- imu

ImuConfig ImuConfig::nominal() {
  ImuConfig c;
  c.noise_density = 0.0005;
  return c;
}

ImuConfig ImuConfig::drifting() {
  ImuConfig c = nominal();
  c.bump_drift = true;
  return c;
}

double imu_read(const RobotState& s, ImuModel& imu, double dt, bool bump, std::mt19937_64& rng) {
  const ImuConfig& c = imu.config;
  if (bump) {
    ++imu.bumps;
    if (c.bump_drift && c.bump_drift_sigma > 0) {
      std::normal_distribution<double> nd(0.0, c.bump_drift_sigma);
      imu.drift_rate += nd(rng);
    }
  }
  if (dt > 0) {
    imu.bias_error += c.gyro_bias * dt;
    imu.drift_error += imu.drift_rate * dt;
    if (c.noise_density > 0) {
      std::normal_distribution<double> nd(0.0, c.noise_density * std::sqrt(dt));
      imu.noise_error += nd(rng);
    }
  }
  imu.last_true = s.heading;
  imu.estimate = s.heading + imu.error();
  return imu.estimate;
}

// ---------------------------------------------------------------- pid

double Pid::update(double error_deg, double dt) {
  const double derivative = last_error_ && dt > 0 ? (error_deg - *last_error_) / dt : 0.0;
  last_error_ = error_deg;
  const double candidate = std::clamp(integral_ + error_deg * dt, -gains_.integral_limit, gains_.integral_limit);
  double out = gains_.kp * error_deg + gains_.ki * candidate + gains_.kd * derivative;
  saturated_ = std::abs(out) > gains_.max_output;
  if (saturated_) {
    out = std::clamp(out, -gains_.max_output, gains_.max_output);
  } else {
    integral_ = candidate;
  }
  return out;
}

void Pid::reset() {
  integral_ = 0.0;
  last_error_.reset();
  saturated_ = false;
}

TrackCommand pid_heading(Pid& pid, double error_deg, double dt, double speed) {
  const double diff = pid.update(error_deg, dt);
  return {speed - diff, speed + diff};
}

// ---------------------------------------------------------------- battery

BatteryModel::BatteryModel(BatteryConfig cfg, double state_of_charge)
    : cfg_(cfg), soc_(std::clamp(state_of_charge, 0.0, 1.0)) {
  if (!(cfg_.capacity_mah > 0) || cfg_.full_voltage <= cfg_.empty_voltage)
    throw std::invalid_argument("bad battery parameters");
}

void BatteryModel::discharge(double dt) {
  soc_ = std::max(0.0, soc_ - cfg_.drive_current_a * dt / 3.6 / cfg_.capacity_mah);
}

void BatteryModel::spray() { soc_ = std::max(0.0, soc_ - cfg_.spray_mah / cfg_.capacity_mah); }

void BatteryModel::charge(double dt) {
  soc_ = std::min(1.0, soc_ + cfg_.charge_current_a * dt / 3.6 / cfg_.capacity_mah);
}

double BatteryModel::voltage() const { return cfg_.empty_voltage + (cfg_.full_voltage - cfg_.empty_voltage) * soc_; }

// ---------------------------------------------------------------- mission

std::string to_string(Phase p) {
  switch (p) {
    case Phase::RowFollow: return "ROW_FOLLOW";
    case Phase::TurnA: return "TURN_A";
    case Phase::NextRowEntry: return "NEXT_ROW_ENTRY";
    case Phase::TurnB: return "TURN_B";
    case Phase::ReturnHome: return "RETURN_HOME";
    case Phase::DockAlign: return "DOCK_ALIGN";
    case Phase::Ramp: return "RAMP";
    case Phase::Charging: return "CHARGING";
    case Phase::Resume: return "RESUME";
    case Phase::Done: return "DONE";
  }
  return "?";
}

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::Running: return "running";
    case Outcome::Completed: return "completed";
    case Outcome::Collision: return "collision";
    case Outcome::Docked: return "docked";
    case Outcome::DockFailed: return "dock_failed";
    case Outcome::TimeCap: return "time_cap";
  }
  return "?";
}

bool legal_transition(Phase from, Phase to) {
  if (from == Phase::Done) return false;
  if (to == Phase::Done) return true;
  switch (from) {
    case Phase::RowFollow: return to == Phase::TurnA || to == Phase::ReturnHome;
    case Phase::TurnA: return to == Phase::NextRowEntry;
    case Phase::NextRowEntry: return to == Phase::TurnB;
    case Phase::TurnB: return to == Phase::RowFollow;
    case Phase::ReturnHome: return to == Phase::DockAlign;
    case Phase::DockAlign: return to == Phase::Ramp;
    case Phase::Ramp: return to == Phase::Charging;
    case Phase::Charging: return to == Phase::Resume;
    case Phase::Resume: return to == Phase::TurnA;
    case Phase::Done: return false;
  }
  return false;
}

Vector2d StationFrame::local(const Vector2d& p) const {
  const Vector2d a = unit(approach_heading);
  const Vector2d right(a.y(), -a.x());
  const Vector2d q = p - face;
  return {q.dot(right), -q.dot(a)};
}

namespace {

bool outbound(Phase p) {
  return p == Phase::RowFollow || p == Phase::TurnA || p == Phase::NextRowEntry || p == Phase::TurnB;
}

void record_waypoint(MissionState& m, const Odometry& odo, double min_gap) {
  if (!m.path.empty() && (m.path.back().position - odo.position).norm() < min_gap) return;
  m.path.push_back({odo.position, odo.heading});
}

void transition(MissionState& m, Phase to, const Odometry& odo) {
  if (!legal_transition(m.phase, to))
    throw std::logic_error("illegal transition " + to_string(m.phase) + " -> " + to_string(to));
  if (outbound(m.phase)) record_waypoint(m, odo, 0.01);
  m.phase = to;
  m.phase_odometer = odo.distance;
  m.step = 0;
  m.leg_state = 0;
}

void finish(MissionState& m, Outcome o, const Odometry& odo) {
  transition(m, Phase::Done, odo);
  m.outcome = o;
}

Directive drive(double speed, double heading) { return {Directive::Kind::Drive, speed, heading, 0.0}; }
Directive rotate(double heading) { return {Directive::Kind::Rotate, 0.0, heading, 0.0}; }

Vector2d arm_position(const Odometry& odo, const MissionConfig& cfg) {
  return odo.position + cfg.robot.camera_ahead * unit(odo.heading);
}

// Heading setpoint from the contour target: back-project it to the ground and steer
// the chassis centre at it, within the deviation bound about `axis`.
std::optional<double> vision_setpoint(const Point2d& px, const Odometry& odo, double axis, const MissionConfig& cfg) {
  const auto g = cfg.nav_camera.ground_hit(px);
  if (!g) return std::nullopt;
  const double bearing = std::atan2(g->y(), g->x() + cfg.robot.camera_ahead);
  const double bound = cfg.max_deviation_deg * kDeg;
  return std::clamp(odo.heading - cfg.steer_gain * bearing, axis - bound, axis + bound);
}

// Follows the recorded path from `cursor` towards `last` (dir = -1 backwards, +1
// forwards). Pivots in place where the next leg turns sharply. Returns nullopt
// once `last` has been reached.
std::optional<Directive> follow_path(MissionState& m, const Percepts& p, const Odometry& odo,
                                     const MissionConfig& cfg, double speed, int dir, std::size_t last) {
  for (;;) {
    const Vector2d target = m.path[m.path_cursor].position;
    const Vector2d leg = target - m.leg_from;
    const double len = leg.norm();
    const double along = len > 1e-9 ? (odo.position - m.leg_from).dot(leg / len) : 0.0;
    if (along < len - cfg.waypoint_tolerance && (target - odo.position).norm() >= cfg.waypoint_tolerance) break;
    if (m.path_cursor == last) return std::nullopt;
    m.leg_from = target;
    m.path_cursor = static_cast<std::size_t>(static_cast<long>(m.path_cursor) + dir);
    m.leg_state = 0;
  }
  const Vector2d target = m.path[m.path_cursor].position;
  const Vector2d leg = target - m.leg_from;
  const double len = leg.norm();
  const Vector2d u = len > 1e-9 ? Vector2d(leg / len) : unit(odo.heading);
  const double leg_heading = near_angle(odo.heading, std::atan2(u.y(), u.x()));

  if (m.leg_state == 0)
    m.leg_state = std::abs(leg_heading - odo.heading) > cfg.pivot_threshold_deg * kDeg ? 1 : 2;
  if (m.leg_state == 1) {
    if (std::abs(leg_heading - odo.heading) > cfg.turn_tolerance_deg * kDeg) return rotate(leg_heading);
    m.leg_state = 2;
    m.setpoint = leg_heading;
  }

  // Between the croplines the rows themselves are the better reference.
  if (p.vision_tick) {
    m.vision_lock = false;
    if (p.target_px)
      if (auto sp = vision_setpoint(*p.target_px, odo, leg_heading, cfg)) {
        m.setpoint = *sp;
        m.vision_lock = true;
      }
  }
  if (!m.vision_lock) {
    const double along = (odo.position - m.leg_from).dot(u);
    const Vector2d aim = m.leg_from + u * std::min(len, std::max(0.0, along) + 0.3);
    const Vector2d to_aim = aim - odo.position;
    m.setpoint = to_aim.norm() > 1e-6 ? near_angle(odo.heading, std::atan2(to_aim.y(), to_aim.x())) : leg_heading;
  }
  return drive(speed, m.setpoint);
}

}  // namespace

MissionState start_mission(const Odometry& odo, const StationFrame& station) {
  MissionState m;
  m.phase = Phase::RowFollow;
  m.axis = odo.heading;
  m.setpoint = odo.heading;
  m.phase_odometer = odo.distance;
  m.station = station;
  // The robot arrived from the station: the path starts where it backed off the ramp.
  const Vector2d a = unit(station.approach_heading);
  m.path.push_back({station.face - a * 1.18, station.approach_heading + kPi});
  m.path.push_back({odo.position, odo.heading});
  return m;
}

MissionState start_docking(const Odometry& odo, const StationFrame& station) {
  MissionState m;
  m.phase = Phase::DockAlign;
  m.station = station;
  m.axis = odo.heading;
  m.setpoint = odo.heading;
  m.phase_odometer = odo.distance;
  return m;
}

std::optional<DockObservation> pattern_observation(const dockdetect::DockResult& r,
                                                   const fieldsim::StationModel& station) {
  const auto& c = r.accepted;
  const std::size_t n = std::min<std::size_t>(c.size(), 8);
  if (n < 3) return std::nullopt;
  const double ratio = station.dot_spacing / station.dot_radius;
  std::optional<DockObservation> best;
  double best_score = 1e18;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (std::size_t k = j + 1; k < n; ++k) {
        std::array<dockdetect::CircleCandidate, 3> t{c[i], c[j], c[k]};
        std::sort(t.begin(), t.end(), [](const auto& a, const auto& b) { return a.center.x() < b.center.x(); });
        std::array<double, 3> radii{t[0].radius, t[1].radius, t[2].radius};
        std::sort(radii.begin(), radii.end());
        const double rm = radii[1];
        if (radii[0] < 0.75 * rm || radii[2] > 1.33 * rm) continue;
        const double s1 = t[1].center.x() - t[0].center.x(), s2 = t[2].center.x() - t[1].center.x();
        const double expect = ratio * rm;
        if (s1 < 0.55 * expect || s2 < 0.55 * expect || s1 > 1.3 * expect || s2 > 1.3 * expect) continue;
        if (std::abs(s1 - s2) > 0.25 * std::max(s1, s2)) continue;
        const double dy = std::abs(t[0].center.y() - t[1].center.y()) + std::abs(t[2].center.y() - t[1].center.y());
        if (dy > rm) continue;
        const double score = std::abs(s1 - s2) + dy;
        if (score < best_score) {
          best_score = score;
          best = DockObservation{{t.begin(), t.end()}, false};
        }
      }
  return best;
}

std::optional<std::pair<Vector2d, double>> locate_station(const DockObservation& obs, const Odometry& odo,
                                                           const MissionConfig& cfg) {
  if (obs.drive_straight || obs.circles.size() != 3) return std::nullopt;
  const auto& cam = cfg.dock_camera;
  std::array<double, 3> radii{obs.circles[0].radius, obs.circles[1].radius, obs.circles[2].radius};
  std::sort(radii.begin(), radii.end());
  if (!(radii[1] > 0)) return std::nullopt;
  const double depth = cam.fx() * cfg.station.dot_radius / radii[1];
  const Eigen::Vector3d ray = cam.ray(obs.circles[1].center);
  const double z = cam.to_camera(ray).z();
  if (!(z > 1e-9)) return std::nullopt;
  const double s = depth / z;
  const Vector2d fw = unit(odo.heading), rt(fw.y(), -fw.x());
  const Vector2d lens = arm_position(odo, cfg);
  const Vector2d face = lens + s * ray.x() * fw + s * ray.y() * rt;
  return std::make_pair(face, std::hypot(s * ray.x(), s * ray.y()));
}

StepResult mission_step(MissionState m, const Percepts& p, const Odometry& odo, const MissionConfig& cfg,
                        double cruise) {
  Directive d;
  if (outbound(m.phase)) record_waypoint(m, odo, cfg.waypoint_spacing);

  switch (m.phase) {
    case Phase::RowFollow: {
      if (p.battery_low) m.return_pending = true;
      if (p.vision_tick) {
        if (p.target_px)
          if (auto sp = vision_setpoint(*p.target_px, odo, m.axis, cfg)) m.setpoint = *sp;
        if (p.green_area) {
          m.areas.push_back(*p.green_area);
          while (static_cast<int>(m.areas.size()) > cfg.row_end_window) m.areas.pop_front();
        }
        const bool armed = odo.distance - m.phase_odometer >= cfg.row_end_arm_distance;
        const std::vector<double> hist(m.areas.begin(), m.areas.end());
        const double threshold = rowdetect::row_end_threshold(360 * 240, cfg.row_end_fraction);
        if (armed && p.green_area && rowdetect::row_end(hist, threshold, cfg.row_end_window)) {
          ++m.rows_completed;
          if (m.rows_completed >= cfg.rows) {
            finish(m, Outcome::Completed, odo);
            return {std::move(m), {}};
          }
          if (m.return_pending) {
            transition(m, Phase::ReturnHome, odo);
            m.setpoint = m.axis;
            return {std::move(m), drive(cruise, m.setpoint)};
          }
          transition(m, Phase::TurnA, odo);
          m.setpoint = m.axis;
          d = drive(cruise, m.setpoint);
          d.commanded_yaw_deg = 90.0 * m.next_turn;
          return {std::move(m), d};
        }
      }
      d = drive(cruise, m.setpoint);
      break;
    }
    case Phase::TurnA: {
      if (m.step == 0) {
        if (odo.distance - m.phase_odometer < cfg.turn_clearance) {
          d = drive(cruise, m.axis);
          break;
        }
        record_waypoint(m, odo, 0.01);
        m.step = 1;
        m.rotate_target = m.axis + m.next_turn * kPi / 2.0;
      }
      if (std::abs(m.rotate_target - odo.heading) > cfg.turn_tolerance_deg * kDeg) {
        d = rotate(m.rotate_target);
        break;
      }
      transition(m, Phase::NextRowEntry, odo);
      d = drive(cruise, m.rotate_target);
      break;
    }
    case Phase::NextRowEntry: {
      if (odo.distance - m.phase_odometer < cfg.row_pitch) {
        d = drive(cruise, m.rotate_target);
        break;
      }
      transition(m, Phase::TurnB, odo);
      m.rotate_target = m.axis + m.next_turn * kPi;
      d = rotate(m.rotate_target);
      break;
    }
    case Phase::TurnB: {
      if (std::abs(m.rotate_target - odo.heading) > cfg.turn_tolerance_deg * kDeg) {
        d = rotate(m.rotate_target);
        break;
      }
      transition(m, Phase::RowFollow, odo);
      m.axis = m.rotate_target;
      m.setpoint = m.axis;
      m.turn_log.push_back(m.next_turn);
      m.next_turn = -m.next_turn;
      ++m.row;
      m.areas.clear();
      d = drive(cruise, m.setpoint);
      break;
    }
    case Phase::ReturnHome: {
      if (m.step == 0) {
        if (odo.distance - m.phase_odometer < cfg.turn_clearance) {
          d = drive(cruise, m.axis);
          break;
        }
        m.path.push_back({odo.position, odo.heading});
        m.resume_point = m.path.back();
        m.resume_turn = m.next_turn;
        m.step = 2;
        m.leg_from = odo.position;
        m.path_cursor = m.path.size() - 2;
        m.leg_state = 0;
      }
      const Vector2d arm = arm_position(odo, cfg);
      if (m.station.local(arm).y() <= cfg.return_stop_distance) {
        transition(m, Phase::DockAlign, odo);
        const Vector2d to = m.station.face - arm;
        m.setpoint = near_angle(odo.heading, std::atan2(to.y(), to.x()));
        d = drive(cruise, m.setpoint);
        break;
      }
      auto dir = follow_path(m, p, odo, cfg, cruise, -1, 0);
      d = dir ? *dir : drive(cruise, m.setpoint);
      break;
    }
    case Phase::DockAlign: {
      if (p.on_ramp) {
        transition(m, Phase::Ramp, odo);
        d = drive(cruise, m.setpoint);
        break;
      }
      if (p.vision_tick && p.dock && !p.dock->drive_straight) {
        if (auto fix = locate_station(*p.dock, odo, cfg)) {
          const double w = 1.0 / std::max(fix->second * fix->second, 0.01);
          m.station_fix = (m.station_fix * m.station_weight + fix->first * w) / (m.station_weight + w);
          m.station_weight += w;
          const StationFrame sf{m.station_fix, m.station.approach_heading};
          const Vector2d arm = arm_position(odo, cfg);
          const double dist = sf.local(arm).y();
          const double look = std::clamp(0.5 * dist, cfg.station_lookahead_min, cfg.station_lookahead_max);
          const Vector2d aim = sf.face - unit(sf.approach_heading) * std::max(dist - look, 0.0);
          const Vector2d to = aim - arm;
          m.setpoint = near_angle(odo.heading, std::atan2(to.y(), to.x()));
        }
      }
      d = drive(cruise, m.setpoint);
      break;
    }
    case Phase::Ramp: {
      if (p.contact_lateral) {
        m.final_lateral = *p.contact_lateral;
        if (std::abs(*p.contact_lateral) <= cfg.funnel_tolerance + 1e-12) {
          m.dock_contact = true;
          transition(m, Phase::Charging, odo);
          return {std::move(m), {}};
        }
        finish(m, Outcome::DockFailed, odo);
        return {std::move(m), {}};
      }
      d = drive(cruise, m.setpoint);
      break;
    }
    case Phase::Charging: {
      if (p.battery_full) {
        if (m.return_pending && m.rows_completed < cfg.rows) {
          m.return_pending = false;
          transition(m, Phase::Resume, odo);
        } else {
          finish(m, Outcome::Docked, odo);
        }
      }
      return {std::move(m), {}};
    }
    case Phase::Resume: {
      if (m.step == 0) {
        if (odo.distance - m.phase_odometer < cfg.backoff_distance) {
          d = drive(-cruise, m.setpoint);
          break;
        }
        m.step = 2;
        m.leg_from = odo.position;
        m.path_cursor = 0;
        m.leg_state = 0;
      }
      auto dir = follow_path(m, p, odo, cfg, cruise, +1, m.path.size() - 1);
      if (dir) {
        d = *dir;
        break;
      }
      transition(m, Phase::TurnA, odo);
      m.step = 1;
      m.rotate_target = m.axis + m.next_turn * kPi / 2.0;
      m.rotate_target = near_angle(odo.heading, m.rotate_target);
      m.axis = m.rotate_target - m.next_turn * kPi / 2.0;
      d = rotate(m.rotate_target);
      d.commanded_yaw_deg = 90.0 * m.next_turn;
      break;
    }
    case Phase::Done:
      return {std::move(m), {}};
  }
  return {std::move(m), d};
}

// ---------------------------------------------------------------- spraying

void Sprayer::on_hit(const WeedHit& hit, std::mt19937_64& rng) {
  if (sprayed_.count(hit.weed)) return;
  double due = hit.time + cfg_.delay;
  if (cfg_.jitter > 0) due += std::uniform_real_distribution<double>(0.0, cfg_.jitter)(rng);
  pending_.push_back({due, hit.weed});
}

std::vector<SprayEvent> Sprayer::fire_due(double t) {
  std::vector<Pending> ready;
  std::vector<Pending> keep;
  for (const auto& p : pending_) (p.due <= t ? ready : keep).push_back(p);
  pending_ = std::move(keep);
  std::sort(ready.begin(), ready.end(),
            [](const Pending& a, const Pending& b) { return a.due != b.due ? a.due < b.due : a.weed < b.weed; });
  std::vector<SprayEvent> out;
  for (const auto& p : ready) {
    const bool dup = !sprayed_.insert(p.weed).second;
    out.push_back({p.due, p.weed, dup});
  }
  return out;
}

std::vector<SprayEvent> Sprayer::flush() { return fire_due(std::numeric_limits<double>::infinity()); }

std::vector<SprayEvent> spray_trigger(std::span<const WeedHit> hits, const SprayConfig& cfg, std::mt19937_64& rng) {
  Sprayer sprayer(cfg);
  std::vector<SprayEvent> out;
  for (const auto& h : hits) {
    for (auto& e : sprayer.fire_due(h.time)) out.push_back(e);
    sprayer.on_hit(h, rng);
    for (auto& e : sprayer.fire_due(h.time)) out.push_back(e);
  }
  for (auto& e : sprayer.flush()) out.push_back(e);
  return out;
}

std::vector<WeedHit> WeedOracle::observe(const RobotState& s, const RobotGeometry& g, double t,
                                         std::mt19937_64& rng) {
  if (zone_.empty()) zone_.assign(weeds_.size(), Zone::Unknown);
  std::normal_distribution<double> nd(0.0, cfg_.measurement_sigma);
  const Vector2d fw = unit(s.heading), rt(fw.y(), -fw.x());
  std::vector<WeedHit> hits;
  for (std::size_t i = 0; i < weeds_.size(); ++i) {
    const Vector2d q = weeds_[i].position - s.position;
    const double along = q.dot(fw), lateral = q.dot(rt);
    if (std::abs(lateral) > 0.5 * g.width || along < cfg_.zone_near - 0.1 || along > cfg_.zone_far + 0.1) {
      zone_[i] = along > cfg_.zone_far ? Zone::Ahead : Zone::Unknown;
      continue;
    }
    const double measured = along + (cfg_.measurement_sigma > 0 ? nd(rng) : 0.0);
    const Zone now = measured > cfg_.zone_far ? Zone::Ahead : measured >= cfg_.zone_near ? Zone::Inside : Zone::Behind;
    if (zone_[i] == Zone::Ahead && now == Zone::Inside) hits.push_back({t, static_cast<std::uint32_t>(i)});
    zone_[i] = now;
  }
  return hits;
}

double duplicate_rate(int weeds, double speed, double tick, const SprayConfig& cfg, std::uint64_t seed) {
  if (weeds <= 0 || !(speed > 0) || !(tick > 0)) throw std::invalid_argument("bad sweep parameters");
  const double gap = 0.4;
  std::vector<fieldsim::Weed> field;
  for (int i = 0; i < weeds; ++i) field.push_back({Vector2d(0.5 + gap * i, 0.0), 0.01});
  std::mt19937_64 rng(splitmix(seed));
  WeedOracle oracle(field, cfg);
  Sprayer sprayer(cfg);
  const RobotGeometry g;
  RobotState s;
  std::vector<int> count(weeds, 0);
  const double end = (0.5 + gap * weeds + 0.5) / speed;
  for (int k = 0; k * tick <= end; ++k) {
    const double t = k * tick;
    s.position.x() = speed * t;
    for (const auto& h : oracle.observe(s, g, t, rng)) sprayer.on_hit(h, rng);
    for (const auto& e : sprayer.fire_due(t)) ++count[e.weed];
  }
  for (const auto& e : sprayer.flush()) ++count[e.weed];
  int sprayed = 0, twice = 0;
  for (int c : count) {
    sprayed += c > 0;
    twice += c > 1;
  }
  return sprayed ? static_cast<double>(twice) / sprayed : 0.0;
}

// ---------------------------------------------------------------- collisions

std::array<Vector2d, 4> Obb::corners() const {
  const Vector2d n(-axis.y(), axis.x());
  const Vector2d a = axis * half_length, b = n * half_width;
  return {center + a + b, center - a + b, center - a - b, center + a - b};
}

bool overlaps(const Obb& a, const Obb& b) {
  const auto ca = a.corners(), cb = b.corners();
  const std::array<Vector2d, 4> axes{a.axis, Vector2d(-a.axis.y(), a.axis.x()), b.axis,
                                     Vector2d(-b.axis.y(), b.axis.x())};
  for (const auto& ax : axes) {
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (const auto& c : ca) {
      const double v = c.dot(ax);
      amin = std::min(amin, v);
      amax = std::max(amax, v);
    }
    for (const auto& c : cb) {
      const double v = c.dot(ax);
      bmin = std::min(bmin, v);
      bmax = std::max(bmax, v);
    }
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

Obb footprint(const RobotState& s, const RobotGeometry& g) {
  return {s.position, unit(s.heading), 0.5 * g.length, 0.5 * g.width};
}

std::vector<Obb> crop_bands(const fieldsim::FieldConfig& field, double piece) {
  std::vector<Obb> out;
  const double L = field.row_length;
  for (int k = 0; k < field.croplines(); ++k) {
    if (field.curvature == 0.0) {
      out.push_back({Vector2d(field.cropline_x(k, 0), 0.5 * L), Vector2d::UnitY(), 0.5 * L, field.band_half_width});
      continue;
    }
    const int n = std::max(1, static_cast<int>(std::ceil(L / piece)));
    const double step = L / n;
    for (int i = 0; i < n; ++i) {
      const double yc = (i + 0.5) * step;
      Vector2d t(field.curvature * yc, 1.0);
      t.normalize();
      // Chord pieces overlap slightly so the chain has no gaps.
      out.push_back({Vector2d(field.cropline_x(k, yc), yc), t, 0.5 * step / t.y() + 1e-3, field.band_half_width});
    }
  }
  return out;
}

std::optional<int> colliding_band(const Obb& robot, std::span<const Obb> bands) {
  const double reach = std::hypot(robot.half_length, robot.half_width);
  for (std::size_t i = 0; i < bands.size(); ++i) {
    const Obb& b = bands[i];
    if ((b.center - robot.center).norm() > reach + std::hypot(b.half_length, b.half_width)) continue;
    if (overlaps(robot, b)) return static_cast<int>(i);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------- episodes

void EpisodeConfig::validate() const {
  field.validate();
  dock.validate();
  if (!(dt > 0) || !(vision_period >= dt) || !(charge_dt > 0) || !(time_cap > 0))
    throw std::invalid_argument("bad episode timing");
  if (mission.rows < 1 || mission.rows > field.aisles) throw std::invalid_argument("rows must lie in [1, aisles]");
  if (!(dock_start_distance > mission.ramp_entry)) throw std::invalid_argument("dock start inside the ramp");
  if (!(robot.track_width > 0 && robot.length > 0 && robot.width > 0)) throw std::invalid_argument("bad robot size");
}

int EpisodeLog::duplicates() const {
  return static_cast<int>(std::count_if(sprays.begin(), sprays.end(), [](const SprayEvent& e) { return e.duplicate; }));
}

namespace {

constexpr double kContactDistance = 0.15;  // arm to header when the ramp brings them together

struct World {
  const EpisodeConfig& cfg;
  std::uint64_t seed;
  std::optional<fieldsim::FieldScene> scene;
  StationFrame station;  // true station, world frame
  std::vector<Obb> bands;
};

fieldsim::Pose2d lens_pose(const RobotState& s, const RobotGeometry& g) {
  const Vector2d p = s.position + g.camera_ahead * unit(s.heading);
  return {p.x(), p.y(), s.heading};
}

}  // namespace

EpisodeLog run_episode(const EpisodeConfig& cfg, std::uint64_t seed, const EpisodeHooks& hooks) {
  cfg.validate();
  EpisodeLog log;
  log.seed = seed;
  log.scenario = cfg.scenario;
  log.rows_total = cfg.mission.rows;

  MissionConfig mcfg = cfg.mission;
  mcfg.nav_camera = cfg.field.camera;
  mcfg.dock_camera = cfg.dock.camera;
  mcfg.station = cfg.dock.station;
  mcfg.robot = cfg.robot;
  mcfg.row_pitch = cfg.field.pitch();

  std::mt19937_64 imu_rng(splitmix(seed ^ 0x1a1a)), bump_rng(splitmix(seed ^ 0xb0b0)),
      spray_rng(splitmix(seed ^ 0x5e5e)), start_rng(splitmix(seed ^ 0x57a7));
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  World world{cfg, seed, std::nullopt, {}, {}};
  RobotState s;
  s.track_width = cfg.robot.track_width;
  BatteryModel battery(cfg.battery, cfg.initial_charge);
  MissionState m;
  Odometry odo;

  if (cfg.scenario == Scenario::Navigation) {
    world.scene.emplace(cfg.field, seed);
    world.bands = crop_bands(cfg.field);
    s.position = Vector2d(cfg.field.aisle_center_x(0, -cfg.entry_offset), -cfg.entry_offset);
    s.heading = kPi / 2.0;
    world.station = {s.position - Vector2d(0.0, cfg.station_gap), -kPi / 2.0};
    odo = {s.position, s.heading, 0.0};
    m = start_mission(odo, world.station);
  } else {
    const double offset =
        cfg.dock_offset.value_or(cfg.dock_max_offset * (2.0 * u01(start_rng) - 1.0));
    log.start_offset = offset;
    world.station = {Vector2d::Zero(), kPi / 2.0};
    const Vector2d arm(offset, -cfg.dock_start_distance);
    const double jitter = cfg.dock_heading_jitter_deg * kDeg * (2.0 * u01(start_rng) - 1.0);
    s.heading = std::atan2(-arm.y(), -arm.x()) + jitter;
    s.position = arm - cfg.robot.camera_ahead * unit(s.heading);
    odo = {s.position, s.heading, 0.0};
    m = start_docking(odo, world.station);
  }
  ImuModel imu(cfg.imu, s.heading);
  Pid pid(cfg.pid);
  Sprayer sprayer(cfg.spray);
  std::optional<WeedOracle> oracle;
  if (world.scene) oracle.emplace(world.scene->weeds(), cfg.spray);

  const int vision_every = std::max(1, static_cast<int>(std::lround(cfg.vision_period / cfg.dt)));
  double t = 0.0;
  int tick = 0, vision_frames = 0;
  Phase last_phase = m.phase;
  double heading_offset = 0.0;  // estimate to odometry frame, changes on re-anchoring
  log.phases.push_back({0.0, m.phase});

  while (m.phase != Phase::Done && t < cfg.time_cap) {
    const bool charging = m.phase == Phase::Charging;
    const double dt = charging ? cfg.charge_dt : cfg.dt;
    Percepts p;
    p.battery_low = battery.low();
    p.battery_full = battery.full();
    TickRecord rec;

    const bool nav_view = m.phase == Phase::RowFollow || m.phase == Phase::ReturnHome || m.phase == Phase::Resume;
    const bool dock_view = m.phase == Phase::DockAlign;
    if (tick % vision_every == 0 && (nav_view || dock_view)) {
      p.vision_tick = true;
      const std::uint64_t frame_seed = splitmix(seed ^ (static_cast<std::uint64_t>(tick) << 20));
      const fieldsim::Pose2d lens = lens_pose(s, cfg.robot);
      FrameDump dump;
      std::optional<Image> frame;
      if (nav_view && world.scene && world.scene->inside(lens)) {
        auto f = world.scene->render(lens, 0.0, frame_seed);
        const auto pre = rowdetect::preprocess(f.image, cfg.preprocess);
        try {
          p.target_px = rowdetect::contour_target(pre.roi_mask).point() + Point2d(pre.roi.x, pre.roi.y);
        } catch (const DetectionError&) {
        }
        p.green_area = static_cast<double>(rowdetect::green_area(pre.roi_mask)) * (360.0 * 240.0) /
                       (static_cast<double>(f.image.width()) * f.image.height());
        frame = std::move(f.image);
        dump.target_px = p.target_px;
      } else if (dock_view) {
        const Vector2d local = world.station.local(Vector2d(lens.x, lens.y));
        if (local.y() > 0.05) {
          auto f = fieldsim::gen_dock_frame(cfg.dock, local.y(), local.x(), frame_seed,
                                            wrap_angle(s.heading - world.station.approach_heading));
          const auto res = dockdetect::def_circle(f.image, cfg.def_circle);
          DockObservation obs;
          if (auto pat = pattern_observation(res, cfg.dock.station)) obs = *pat;
          p.dock = obs;
          if (res.target) rec.dock_target_px = res.target;
          dump.circles = res.accepted;
          dump.target_px = res.target;
          frame = std::move(f.image);
        }
      }
      if (frame && hooks.on_frame && hooks.frame_every > 0 && vision_frames % hooks.frame_every == 0) {
        dump.tick = tick;
        dump.t = t;
        dump.image = &*frame;
        dump.scenario = dock_view ? Scenario::Docking : Scenario::Navigation;
        hooks.on_frame(dump);
      }
      if (frame) ++vision_frames;
    }
    if (m.phase == Phase::DockAlign || m.phase == Phase::Ramp) {
      const Vector2d local = world.station.local(s.position + cfg.robot.camera_ahead * unit(s.heading));
      p.on_ramp = local.y() <= mcfg.ramp_entry;
      if (m.phase == Phase::Ramp && local.y() <= kContactDistance) p.contact_lateral = local.x();
    }
    rec.target_px = p.target_px;
    rec.green_area = p.green_area;

    auto step = mission_step(std::move(m), p, odo, mcfg, battery.cruise_speed());
    m = std::move(step.state);
    if (m.phase != last_phase) {
      pid.reset();
      log.phases.push_back({t, m.phase});
      if (m.phase == Phase::RowFollow && last_phase == Phase::TurnB) log.turns.push_back(m.turn_log.back());
      if (m.phase == Phase::Resume) {
        // Parked on the charger the robot sits at a known pose; dead reckoning restarts there.
        const Vector2d a = unit(m.station.approach_heading);
        odo.position = m.station.face - a * (kContactDistance + cfg.robot.camera_ahead);
        heading_offset += near_angle(odo.heading, m.station.approach_heading) - odo.heading;
        odo.heading += near_angle(odo.heading, m.station.approach_heading) - odo.heading;
        m.setpoint = odo.heading;
      }
      last_phase = m.phase;
    }

    TrackCommand cmd;
    const Directive& d = step.directive;
    if (d.kind != Directive::Kind::Stop) {
      const double err = (d.heading - odo.heading) / kDeg;
      cmd = pid_heading(pid, err, dt, d.kind == Directive::Kind::Drive ? d.speed : 0.0);
    }

    // Physics.
    const RobotState next = step_kinematics(s, cmd, dt);
    const double moved = (next.position - s.position).norm();
    const bool bump = u01(bump_rng) < cfg.imu.bumps_per_m * moved;
    const double est_before = odo.heading;
    s = next;
    const double est = imu_read(s, imu, dt, bump, imu_rng);
    const double v_cmd = 0.5 * (cmd.left + cmd.right);
    odo.position += v_cmd * dt * unit(0.5 * (est_before + est + heading_offset));
    odo.heading = est + heading_offset;
    odo.distance += std::abs(v_cmd) * dt;
    if (charging) battery.charge(dt);
    else battery.discharge(dt);

    if (oracle && m.phase == Phase::RowFollow) {
      for (const auto& h : oracle->observe(s, cfg.robot, t + dt, spray_rng)) sprayer.on_hit(h, spray_rng);
    }
    for (const auto& e : sprayer.fire_due(t + dt)) {
      log.sprays.push_back(e);
      battery.spray();
    }

    rec.t = t + dt;
    rec.dt = dt;
    rec.phase = m.phase;
    rec.state = s;
    rec.heading_estimate = est;
    rec.command = cmd;
    rec.voltage = battery.voltage();
    log.ticks.push_back(rec);
    t += dt;
    ++tick;

    if (!world.bands.empty()) {
      if (auto band = colliding_band(footprint(s, cfg.robot), world.bands)) {
        log.collisions.push_back({t, s, *band});
        if (cfg.stop_on_collision && m.phase != Phase::Done) {
          finish(m, Outcome::Collision, odo);
          log.phases.push_back({t, m.phase});
        }
      }
    }
    if (cfg.scenario == Scenario::Docking && m.phase == Phase::Charging) {
      finish(m, Outcome::Docked, odo);
      log.phases.push_back({t, m.phase});
    }
  }
  for (const auto& e : sprayer.flush()) log.sprays.push_back(e);

  log.outcome = m.phase == Phase::Done ? m.outcome : Outcome::TimeCap;
  log.rows_completed = m.rows_completed;
  log.coverage = std::clamp(static_cast<double>(m.rows_completed) / cfg.mission.rows, 0.0, 1.0);
  log.dock_contact = m.dock_contact;
  log.final_lateral = m.final_lateral;
  log.dock_success = m.dock_contact && m.final_lateral && std::abs(*m.final_lateral) <= mcfg.funnel_tolerance + 1e-12;
  log.sim_time = t;
  return log;
}

// ---------------------------------------------------------------- logs

namespace {

json opt_point(const std::optional<Point2d>& p) {
  if (!p) return nullptr;
  return json::array({p->x(), p->y()});
}

}  // namespace

std::string summary_json(const EpisodeLog& log) {
  json j;
  j["type"] = "summary";
  j["seed"] = log.seed;
  j["scenario"] = log.scenario == Scenario::Navigation ? "navigation" : "docking";
  j["outcome"] = to_string(log.outcome);
  j["rows_completed"] = log.rows_completed;
  j["rows_total"] = log.rows_total;
  j["coverage"] = log.coverage;
  j["collisions"] = log.collisions.size();
  j["dock_success"] = log.dock_success;
  j["dock_contact"] = log.dock_contact;
  j["final_lateral"] = log.final_lateral ? json(*log.final_lateral) : json(nullptr);
  j["start_offset"] = log.start_offset;
  j["sprays"] = log.sprays.size();
  j["duplicates"] = log.duplicates();
  j["turns"] = log.turns;
  j["sim_time"] = log.sim_time;
  j["ticks"] = log.ticks.size();
  return j.dump();
}

std::string to_jsonl(const EpisodeLog& log) {
  std::ostringstream out;
  for (const auto& r : log.ticks) {
    json j;
    j["type"] = "tick";
    j["t"] = r.t;
    j["dt"] = r.dt;
    j["phase"] = to_string(r.phase);
    j["x"] = r.state.position.x();
    j["y"] = r.state.position.y();
    j["heading"] = r.state.heading;
    j["heading_est"] = r.heading_estimate;
    j["speed"] = r.state.speed;
    j["left"] = r.command.left;
    j["right"] = r.command.right;
    j["target"] = opt_point(r.target_px);
    j["green_area"] = r.green_area ? json(*r.green_area) : json(nullptr);
    j["dock_target"] = opt_point(r.dock_target_px);
    j["voltage"] = r.voltage;
    out << j.dump() << '\n';
  }
  for (const auto& [time, phase] : log.phases)
    out << json{{"type", "phase"}, {"t", time}, {"phase", to_string(phase)}}.dump() << '\n';
  for (const auto& e : log.sprays)
    out << json{{"type", "spray"}, {"t", e.time}, {"weed", e.weed}, {"duplicate", e.duplicate}}.dump() << '\n';
  for (const auto& c : log.collisions)
    out << json{{"type", "collision"},
                {"t", c.t},
                {"x", c.state.position.x()},
                {"y", c.state.position.y()},
                {"heading", c.state.heading},
                {"band", c.band}}
               .dump()
        << '\n';
  out << summary_json(log) << '\n';
  return out.str();
}

}  // namespace rowpilot::robotsim
