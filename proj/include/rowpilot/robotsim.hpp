#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "rowpilot/dockdetect.hpp"
#include "rowpilot/fieldsim.hpp"
#include "rowpilot/geometry.hpp"
#include "rowpilot/rowdetect.hpp"

// Closed-loop robot simulation: tracked differential drive, a drifting gyro, heading
// PID, the row-following mission with double turns, battery, sprayer and docking.
namespace rowpilot::robotsim {

// Heading convention follows fieldsim::Pose2d: radians counter-clockwise from +x.
struct RobotGeometry {
  double length = 0.36;
  double width = 0.21;
  double track_width = 0.18;    // centre-to-centre of the tracks
  double camera_ahead = 0.18;   // lens and charging arm, ahead of the chassis centre
};

struct RobotState {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  double heading = 0.0;
  double speed = 0.0;
  double track_width = 0.18;

  fieldsim::Pose2d pose() const { return {position.x(), position.y(), heading}; }
};

struct TrackCommand {
  double left = 0.0;   // m/s
  double right = 0.0;
};

// Exact arc integration of constant track speeds over `dt`. Throws
// std::invalid_argument unless dt > 0.
RobotState step_kinematics(const RobotState& s, TrackCommand cmd, double dt);

// Wraps to (-pi, pi].
double wrap_angle(double a);

struct ImuConfig {
  double gyro_bias = 0.0;        // rad/s
  double noise_density = 0.0;    // angle random walk, rad/sqrt(s)
  bool bump_drift = false;       // bumps perturb the drift rate
  double bump_drift_sigma = 0.0017;  // rad/s added per bump, 1 sigma
  double bumps_per_m = 2.0;      // mean bump count per metre driven

  static ImuConfig nominal();
  static ImuConfig drifting();
};

struct ImuModel {
  ImuConfig config;
  double drift_rate = 0.0;       // rad/s accumulated from bumps
  double estimate = 0.0;         // integrated heading
  double last_true = 0.0;
  double bias_error = 0.0;       // accumulated error terms, rad
  double drift_error = 0.0;
  double noise_error = 0.0;
  int bumps = 0;

  ImuModel() = default;
  ImuModel(ImuConfig cfg, double initial_heading)
      : config(cfg), estimate(initial_heading), last_true(initial_heading) {}
  double error() const { return bias_error + drift_error + noise_error; }
};

// Integrates the true heading change since the last read plus bias, bump drift and
// noise over `dt`; returns the new estimate.
double imu_read(const RobotState& s, ImuModel& imu, double dt, bool bump, std::mt19937_64& rng);

struct PidGains {
  double kp = 0.006;            // (m/s) of track differential per degree
  double ki = 0.001;
  double kd = 0.0005;
  double max_output = 0.10;     // m/s
  double integral_limit = 40.0; // degree-seconds
};

// Heading PID with conditional integration: the integral is frozen whenever the
// output saturates.
class Pid {
 public:
  explicit Pid(PidGains gains = {}) : gains_(gains) {}

  // Differential track speed: right = v + out, left = v - out.
  double update(double error_deg, double dt);
  void reset();

  double integral() const { return integral_; }
  bool saturated() const { return saturated_; }
  const PidGains& gains() const { return gains_; }

 private:
  PidGains gains_;
  double integral_ = 0.0;
  std::optional<double> last_error_;
  bool saturated_ = false;
};

// Differential command for a heading error; the tracks are symmetric about `speed`.
TrackCommand pid_heading(Pid& pid, double error_deg, double dt, double speed = 0.0);

struct BatteryConfig {
  double full_voltage = 16.8;
  double empty_voltage = 13.2;
  double capacity_mah = 10400.0;
  double drive_current_a = 1.6;   // about 6.5 h from full
  double spray_mah = 0.05;        // per spray
  double low_voltage = 14.0;
  double charge_current_a = 5.0;
  double full_speed = 0.14;       // m/s
  double low_speed = 0.09;
};

class BatteryModel {
 public:
  explicit BatteryModel(BatteryConfig cfg = {}, double state_of_charge = 1.0);

  void discharge(double dt);
  void spray();
  void charge(double dt);

  double voltage() const;
  double state_of_charge() const { return soc_; }
  bool low() const { return voltage() < cfg_.low_voltage; }
  bool full() const { return soc_ >= 1.0; }
  double cruise_speed() const { return low() ? cfg_.low_speed : cfg_.full_speed; }
  const BatteryConfig& config() const { return cfg_; }

 private:
  BatteryConfig cfg_;
  double soc_;
};

enum class Phase { RowFollow, TurnA, NextRowEntry, TurnB, ReturnHome, DockAlign, Ramp, Charging, Resume, Done };

std::string to_string(Phase p);
bool legal_transition(Phase from, Phase to);

enum class Outcome { Running, Completed, Collision, Docked, DockFailed, TimeCap };
std::string to_string(Outcome o);

struct Waypoint {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  double heading = 0.0;
};

struct MissionConfig {
  int rows = 6;
  double max_deviation_deg = 5.0;   // setpoint clamp about the row axis
  double steer_gain = 1.0;          // fraction of the target bearing applied
  double row_end_arm_distance = 0.5;
  double row_end_fraction = rowdetect::kRowEndAreaFraction;
  int row_end_window = rowdetect::kRowEndWindow;
  double turn_clearance = 0.40;     // straight run past the row end before turning
  double row_pitch = 0.29;          // lateral step between aisles
  double turn_tolerance_deg = 1.0;
  double waypoint_tolerance = 0.03;
  double waypoint_spacing = 0.25;
  double pivot_threshold_deg = 20.0;
  double return_stop_distance = 3.0;  // hand over to vision this far from the station
  double station_lookahead_min = 0.3;
  double station_lookahead_max = 1.0;
  double ramp_entry = 0.6;          // arm distance from the station face
  double funnel_tolerance = 0.03;
  double backoff_distance = 0.4;
  fieldsim::CameraModel nav_camera;
  fieldsim::CameraModel dock_camera{360, 240, 60.0, 0.12, 85.0};
  fieldsim::StationModel station;
  RobotGeometry robot;
};

// Station geometry in the odometry frame: face centre and the heading that points
// at the face along its axis.
struct StationFrame {
  Eigen::Vector2d face = Eigen::Vector2d::Zero();
  double approach_heading = 0.0;

  // (lateral right of the axis, distance in front of the face) of a point.
  Eigen::Vector2d local(const Eigen::Vector2d& p) const;
};

struct MissionState {
  Phase phase = Phase::RowFollow;
  Outcome outcome = Outcome::Running;
  int row = 0;
  int rows_completed = 0;
  int next_turn = -1;                 // -1 clockwise, +1 counter-clockwise
  std::vector<int> turn_log;
  double axis = 0.0;                  // row axis in the estimated heading frame
  double setpoint = 0.0;
  double phase_odometer = 0.0;        // odometer reading when the phase began
  int step = 0;                       // sub-step within a phase
  double rotate_target = 0.0;
  std::deque<double> areas;
  bool return_pending = false;
  // Path memory for return and resume.
  std::vector<Waypoint> path;
  std::size_t path_cursor = 0;        // waypoint being driven to
  Eigen::Vector2d leg_from = Eigen::Vector2d::Zero();
  int leg_state = 0;                  // 0 new leg, 1 pivoting in place, 2 driving
  bool vision_lock = false;           // last vision tick produced a row target
  Waypoint resume_point;
  int resume_turn = -1;
  // Docking.
  StationFrame station;               // prior from the mission start
  Eigen::Vector2d station_fix = Eigen::Vector2d::Zero();
  double station_weight = 0.0;
  bool dock_contact = false;
  std::optional<double> final_lateral;
};

// One dock detection reduced to the three dot circles of the pattern.
struct DockObservation {
  std::vector<dockdetect::CircleCandidate> circles;
  bool drive_straight = true;
};

struct Percepts {
  bool vision_tick = false;
  std::optional<Point2d> target_px;   // navigation frame
  std::optional<double> green_area;   // at the 360x240 scale
  bool battery_low = false;
  bool battery_full = false;
  std::optional<DockObservation> dock;
  bool on_ramp = false;
  std::optional<double> contact_lateral;  // arm offset when it meets the header
};

struct Odometry {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  double heading = 0.0;     // IMU estimate
  double distance = 0.0;    // total path length
};

struct Directive {
  enum class Kind { Drive, Rotate, Stop };
  Kind kind = Kind::Stop;
  double speed = 0.0;       // signed, m/s
  double heading = 0.0;     // heading to hold or rotate to, estimated frame
  double commanded_yaw_deg = 0.0;  // set on the tick a 90 degree turn is issued
};

struct StepResult {
  MissionState state;
  Directive directive;
};

// Starts a mission at the entry of the first aisle with the station behind it.
MissionState start_mission(const Odometry& odo, const StationFrame& station);
// Starts directly in DOCK_ALIGN.
MissionState start_docking(const Odometry& odo, const StationFrame& station);

// One control tick. Throws std::logic_error on an illegal phase transition.
StepResult mission_step(MissionState m, const Percepts& p, const Odometry& odo, const MissionConfig& cfg,
                        double cruise_speed);

// Pattern check: three circles, similar radii, roughly collinear and evenly spaced.
std::optional<DockObservation> pattern_observation(const dockdetect::DockResult& r,
                                                   const fieldsim::StationModel& station = {});

// Station face centre in the odometry frame from one observation, with its range.
std::optional<std::pair<Eigen::Vector2d, double>> locate_station(const DockObservation& obs, const Odometry& odo,
                                                                  const MissionConfig& cfg);

// Weeds crossing the spray zone. A hit is the measured entry of a weed into the
// zone; noisy measurements can make the same weed enter more than once.
struct WeedHit {
  double time = 0.0;
  std::uint32_t weed = 0;
};

struct SprayConfig {
  double delay = 0.4;       // s between a hit and the nozzle firing
  double jitter = 0.2;      // extra uniform [0, jitter] s of link latency
  double zone_near = 0.18;  // zone along the robot axis, m ahead of the centre
  double zone_far = 0.25;
  double measurement_sigma = 0.0065; // m, weed position noise per tick
};

struct SprayEvent {
  double time = 0.0;
  std::uint32_t weed = 0;
  bool duplicate = false;
};

// Online form: hits arrive in time order, sprays fire when due. A hit is dropped
// once its weed has been sprayed; a hit while a spray is still pending schedules
// another one.
class Sprayer {
 public:
  explicit Sprayer(SprayConfig cfg = {}) : cfg_(cfg) {}

  void on_hit(const WeedHit& hit, std::mt19937_64& rng);
  // Sprays due at or before `t`, in firing order.
  std::vector<SprayEvent> fire_due(double t);
  std::vector<SprayEvent> flush();

 private:
  struct Pending {
    double due;
    std::uint32_t weed;
  };
  SprayConfig cfg_;
  std::vector<Pending> pending_;
  std::unordered_set<std::uint32_t> sprayed_;
};

std::vector<SprayEvent> spray_trigger(std::span<const WeedHit> hits, const SprayConfig& cfg, std::mt19937_64& rng);

// Tracks measured weed positions against the zone and emits entry hits.
class WeedOracle {
 public:
  WeedOracle(std::vector<fieldsim::Weed> weeds, SprayConfig cfg) : weeds_(std::move(weeds)), cfg_(cfg) {}
  std::vector<WeedHit> observe(const RobotState& s, const RobotGeometry& g, double t, std::mt19937_64& rng);

 private:
  enum class Zone : std::uint8_t { Unknown, Ahead, Inside, Behind };
  std::vector<fieldsim::Weed> weeds_;
  SprayConfig cfg_;
  std::vector<Zone> zone_;
};

// Duplicate fraction when a robot at `speed` passes `weeds` weeds with the oracle
// sampled every `tick` seconds.
double duplicate_rate(int weeds, double speed, double tick, const SprayConfig& cfg, std::uint64_t seed);

// Oriented rectangle.
struct Obb {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  Eigen::Vector2d axis = Eigen::Vector2d::UnitX();  // unit, along half_length
  double half_length = 0.0;
  double half_width = 0.0;

  std::array<Eigen::Vector2d, 4> corners() const;
};

// Separating-axis test on the four edge normals.
bool overlaps(const Obb& a, const Obb& b);
Obb footprint(const RobotState& s, const RobotGeometry& g);
// Crop stem bands as short rectangles along each cropline.
std::vector<Obb> crop_bands(const fieldsim::FieldConfig& field, double piece = 0.05);
std::optional<int> colliding_band(const Obb& robot, std::span<const Obb> bands);

enum class Scenario { Navigation, Docking };

struct EpisodeConfig {
  Scenario scenario = Scenario::Navigation;
  fieldsim::FieldConfig field;
  fieldsim::DockConfig dock;
  RobotGeometry robot;
  ImuConfig imu = ImuConfig::nominal();
  PidGains pid;
  BatteryConfig battery;
  double initial_charge = 1.0;
  SprayConfig spray;
  MissionConfig mission;
  rowdetect::PreprocessParams preprocess;
  dockdetect::DefCircleParams def_circle;
  double dt = 0.05;
  double vision_period = 0.25;
  double charge_dt = 10.0;           // coarser step while parked on the charger
  double time_cap = 900.0;
  bool stop_on_collision = true;
  double entry_offset = 0.35;        // chassis centre before the row start, m
  double station_gap = 3.6;          // station face behind the mission start, m
  // Docking scenario.
  double dock_start_distance = 3.0;  // arm to station face
  double dock_max_offset = 0.5;
  std::optional<double> dock_offset; // drawn from the seed when unset
  double dock_heading_jitter_deg = 3.0;

  void validate() const;
};

struct TickRecord {
  double t = 0.0;
  double dt = 0.0;
  Phase phase = Phase::RowFollow;
  RobotState state;
  double heading_estimate = 0.0;
  TrackCommand command;
  std::optional<Point2d> target_px;
  std::optional<double> green_area;
  std::optional<Point2d> dock_target_px;
  double voltage = 0.0;
};

struct CollisionRecord {
  double t = 0.0;
  RobotState state;
  int band = 0;
};

struct EpisodeLog {
  std::uint64_t seed = 0;
  Scenario scenario = Scenario::Navigation;
  std::vector<TickRecord> ticks;
  std::vector<SprayEvent> sprays;
  std::vector<CollisionRecord> collisions;
  std::vector<int> turns;
  std::vector<std::pair<double, Phase>> phases;  // phase entered at time
  Outcome outcome = Outcome::Running;
  int rows_completed = 0;
  int rows_total = 0;
  double coverage = 0.0;
  bool dock_success = false;
  bool dock_contact = false;
  std::optional<double> final_lateral;
  double sim_time = 0.0;
  double start_offset = 0.0;

  int duplicates() const;
};

struct FrameDump {
  int tick = 0;
  double t = 0.0;
  const Image* image = nullptr;
  std::optional<Point2d> target_px;
  std::vector<dockdetect::CircleCandidate> circles;
  Scenario scenario = Scenario::Navigation;
};

struct EpisodeHooks {
  int frame_every = 0;   // vision frames between dumps; 0 disables
  std::function<void(const FrameDump&)> on_frame;
};

// Deterministic in (cfg, seed).
EpisodeLog run_episode(const EpisodeConfig& cfg, std::uint64_t seed, const EpisodeHooks& hooks = {});

// JSON lines: one per tick, one per event, then a summary line.
std::string to_jsonl(const EpisodeLog& log);
std::string summary_json(const EpisodeLog& log);

}  // namespace rowpilot::robotsim
