#include "config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace rowpilot::cli {

using json = nlohmann::json;

namespace {

// Walks one JSON object either filling a struct from it (Read) or describing the
// struct into it (Write), so both directions share a single field list.
class Binder {
 public:
  enum class Mode { Read, Write };

  Binder(json& node, std::string path, Mode mode) : node_(node), path_(std::move(path)), mode_(mode) {
    if (mode_ == Mode::Read && !node_.is_object()) fail(path_, "expected an object");
  }

  bool reading() const { return mode_ == Mode::Read; }

  template <class T>
  void field(const char* key, T& value) {
    const std::string p = path_ + "." + key;
    if (mode_ == Mode::Write) {
      node_[key] = encode(value);
      return;
    }
    seen_.insert(key);
    if (!node_.contains(key)) return;
    decode(node_.at(key), value, p);
  }

  // Numeric field with an inclusive lower bound checked on read.
  template <class T>
  void field(const char* key, T& value, T min) {
    field(key, value);
    if (mode_ == Mode::Read && value < min)
      fail(path_ + "." + key, "must be at least " + std::to_string(min));
  }

  template <class F>
  void section(const char* key, F&& bind) {
    const std::string p = path_ + "." + key;
    if (mode_ == Mode::Write) {
      json child = json::object();
      Binder b(child, p, mode_);
      bind(b);
      node_[key] = std::move(child);
      return;
    }
    seen_.insert(key);
    if (!node_.contains(key)) return;
    Binder b(node_.at(key), p, mode_);
    bind(b);
    b.finish();
  }

  // Enumerations stored as strings.
  template <class E>
  void choice(const char* key, E& value, std::initializer_list<std::pair<const char*, E>> options) {
    const std::string p = path_ + "." + key;
    if (mode_ == Mode::Write) {
      for (const auto& [name, v] : options)
        if (v == value) node_[key] = name;
      return;
    }
    seen_.insert(key);
    if (!node_.contains(key)) return;
    const json& v = node_.at(key);
    if (!v.is_string()) fail(p, "expected a string");
    for (const auto& [name, e] : options)
      if (v.get<std::string>() == name) {
        value = e;
        return;
      }
    std::string names;
    for (const auto& [name, e] : options) names += std::string(names.empty() ? "" : ", ") + name;
    fail(p, "unknown value '" + v.get<std::string>() + "' (expected one of " + names + ")");
  }

  void finish() const {
    if (mode_ != Mode::Read) return;
    for (const auto& [k, v] : node_.items())
      if (!seen_.count(k)) fail(path_ + "." + k, "unknown key");
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ConfigError(path + ": " + what);
  }

 private:
  static json encode(double v) { return v; }
  static json encode(int v) { return v; }
  static json encode(bool v) { return v; }
  static json encode(std::uint64_t v) { return v; }
  static json encode(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
  static json encode(const HsvRange& r) {
    json bands = json::array();
    for (const auto& b : r.bands()) bands.push_back({{"low", b.low}, {"high", b.high}});
    return bands;
  }

  static void decode(const json& j, double& v, const std::string& p) {
    if (!j.is_number()) fail(p, "expected a number");
    v = j.get<double>();
    if (!std::isfinite(v)) fail(p, "must be finite");
  }
  static void decode(const json& j, int& v, const std::string& p) {
    if (!j.is_number_integer()) fail(p, "expected an integer");
    const auto x = j.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) fail(p, "out of range");
    v = static_cast<int>(x);
  }
  static void decode(const json& j, bool& v, const std::string& p) {
    if (!j.is_boolean()) fail(p, "expected true or false");
    v = j.get<bool>();
  }
  static void decode(const json& j, std::uint64_t& v, const std::string& p) {
    if (!j.is_number_unsigned()) fail(p, "expected a non-negative integer");
    v = j.get<std::uint64_t>();
  }
  static void decode(const json& j, std::optional<double>& v, const std::string& p) {
    if (j.is_null()) {
      v.reset();
      return;
    }
    double x = 0;
    decode(j, x, p);
    v = x;
  }
  static void decode(const json& j, HsvRange& r, const std::string& p) {
    if (j.is_string()) {
      const std::string name = j.get<std::string>();
      if (name == "green_crop") r = HsvRange::green_crop();
      else if (name == "red_sun") r = HsvRange::red_sun();
      else if (name == "red_backlight") r = HsvRange::red_backlight();
      else if (name == "red_trial") r = HsvRange::red_trial();
      else if (name == "blue_header") r = HsvRange::blue_header();
      else fail(p, "unknown colour range '" + name + "'");
      return;
    }
    if (!j.is_array() || j.empty()) fail(p, "expected a preset name or a non-empty list of bands");
    std::vector<HsvBand> bands;
    for (std::size_t i = 0; i < j.size(); ++i) {
      const std::string bp = p + "[" + std::to_string(i) + "]";
      const json& b = j[i];
      if (!b.is_object()) fail(bp, "expected {\"low\": [h,s,v], \"high\": [h,s,v]}");
      HsvBand band;
      for (const auto& [k, v] : b.items()) {
        if (k != "low" && k != "high") fail(bp + "." + k, "unknown key");
        if (!v.is_array() || v.size() != 3) fail(bp + "." + k, "expected three integers");
        auto& dst = k == "low" ? band.low : band.high;
        for (int c = 0; c < 3; ++c) {
          if (!v[c].is_number_integer()) fail(bp + "." + k, "expected three integers");
          dst[c] = v[c].get<int>();
        }
      }
      if (!band.valid()) fail(bp, "band out of range or inverted");
      bands.push_back(band);
    }
    r = HsvRange(std::move(bands));
  }

  json& node_;
  std::string path_;
  Mode mode_;
  std::set<std::string> seen_;
};

void bind_camera(Binder& b, fieldsim::CameraModel& c) {
  b.field("width", c.width, 16);
  b.field("height", c.height, 16);
  b.field("hfov_deg", c.hfov_deg);
  b.field("height_m", c.height_m);
  b.field("tilt_deg", c.tilt_deg);
}

void bind_field(Binder& b, fieldsim::FieldConfig& f) {
  b.field("aisle_width", f.aisle_width);
  b.field("band_half_width", f.band_half_width);
  b.field("aisles", f.aisles, 1);
  b.field("row_length", f.row_length);
  b.field("curvature", f.curvature);
  b.field("plant_height", f.plant_height);
  b.field("plant_spacing", f.plant_spacing);
  b.field("weed_density", f.weed_density, 0.0);
  b.field("stone_density", f.stone_density, 0.0);
  b.field("plant_hue", f.plant_hue);
  b.field("hue_drift_per_hour", f.hue_drift_per_hour);
  b.field("value_scale", f.value_scale);
  b.section("camera", [&](Binder& c) { bind_camera(c, f.camera); });
}

void bind_dock(Binder& b, fieldsim::DockConfig& d) {
  b.section("camera", [&](Binder& c) { bind_camera(c, d.camera); });
  b.section("station", [&](Binder& s) {
    s.field("dot_radius", d.station.dot_radius);
    s.field("dot_spacing", d.station.dot_spacing);
    s.field("dot_height", d.station.dot_height);
  });
  b.field("glare", d.glare);
  b.field("glare_rate", d.glare_rate, 0.0);
  b.field("glare_radius_min", d.glare_radius_min);
  b.field("glare_radius_max", d.glare_radius_max);
  b.field("noise_sigma", d.noise_sigma, 0.0);
  b.field("value_scale", d.value_scale);
}

void bind_corpus(Binder& b, fieldsim::CorpusOptions& o) {
  b.choice("scene", o.scene, {{"field", fieldsim::SceneKind::Field}, {"dock", fieldsim::SceneKind::Dock}});
  b.field("frames", o.frames, 1);
  b.field("lateral_jitter", o.lateral_jitter, 0.0);
  b.field("heading_jitter_deg", o.heading_jitter_deg, 0.0);
  b.field("max_hours", o.max_hours, 0.0);
  b.field("min_distance", o.min_distance);
  b.field("max_distance", o.max_distance);
  b.field("max_offset", o.max_offset, 0.0);
  b.field("aim_jitter_deg", o.aim_jitter_deg, 0.0);
}

void bind_preprocess(Binder& b, rowdetect::PreprocessParams& p) {
  b.field("blur_ksize", p.blur_ksize, 1);
  b.field("blur_sigma", p.blur_sigma);
  b.field("green", p.green);
  b.field("morph_ksize", p.morph_ksize, 1);
  b.field("canny_low", p.canny_low, 0);
  b.field("canny_high", p.canny_high, 0);
  b.field("roi_keep_fraction", p.roi_keep_fraction);
  if (b.reading()) {
    if (p.blur_ksize % 2 == 0) Binder::fail("$.preprocess.blur_ksize", "must be odd");
    if (p.morph_ksize % 2 == 0) Binder::fail("$.preprocess.morph_ksize", "must be odd");
    if (p.canny_low > p.canny_high) Binder::fail("$.preprocess.canny_low", "must not exceed canny_high");
    if (!(p.roi_keep_fraction > 0 && p.roi_keep_fraction <= 1))
      Binder::fail("$.preprocess.roi_keep_fraction", "must lie in (0, 1]");
  }
}

void bind_detectors(Binder& b, rowdetect::DetectorParams& d) {
  b.section("contour", [&](Binder& c) { c.field("min_area_fraction", d.contour.min_area_fraction, 0.0); });
  b.section("pht", [&](Binder& c) {
    c.field("rho", d.pht.rho);
    c.field("theta_deg", d.pht.theta_deg);
    c.field("threshold", d.pht.threshold, 1);
    c.field("min_length", d.pht.min_length, 1);
    c.field("max_gap", d.pht.max_gap, 0);
  });
  b.section("lsd", [&](Binder& c) {
    c.field("angle_tolerance_deg", d.lsd.angle_tolerance_deg);
    c.field("min_length", d.lsd.min_length);
    c.field("min_gradient", d.lsd.min_gradient);
    c.field("smooth_ksize", d.lsd.smooth_ksize, 1);
  });
  b.section("fpe", [&](Binder& c) {
    c.field("harris_k", d.fpe.harris_k);
    c.field("quality", d.fpe.quality);
    c.field("nms_radius", d.fpe.nms_radius, 0);
    c.field("max_corners", d.fpe.max_corners, 1);
    c.field("ransac_iterations", d.fpe.ransac_iterations, 1);
    c.field("inlier_band", d.fpe.inlier_band);
    c.field("min_inliers", d.fpe.min_inliers, 2);
  });
  b.section("vanishing", [&](Binder& c) {
    c.field("min_abs_slope", d.vanishing.slope.min_abs_slope);
    c.field("max_abs_slope", d.vanishing.slope.max_abs_slope);
    c.field("horizontal_margin", d.vanishing.horizontal_margin);
    c.field("vertical_margin", d.vanishing.vertical_margin);
  });
}

void bind_def_circle(Binder& b, dockdetect::DefCircleParams& p) {
  int min_pts = static_cast<int>(p.min_pts);
  b.field("min_pts", min_pts, 3);
  p.min_pts = static_cast<std::size_t>(min_pts);
  b.field("max_ofs", p.max_ofs, 0.0);
  b.field("min_r", p.min_r, 0.0);
  b.field("max_r", p.max_r, 0.0);
  b.field("red", p.red);
  b.field("red_area_floor", p.red_area_floor, 0.0);
  b.field("neighborhood_factor", p.neighborhood_factor, 0.0);
  b.field("binarize_t", p.binarize_t, 0);
  b.field("binarize_channel", p.binarize_channel, -1);
  b.field("work_width", p.work_width, 16);
  b.field("work_height", p.work_height, 16);
  b.field("hough_fallback", p.hough_fallback);
  b.section("clahe", [&](Binder& c) {
    c.field("clip_limit", p.clahe.clip_limit, 0.0);
    c.field("tiles_x", p.clahe.tiles_x, 1);
    c.field("tiles_y", p.clahe.tiles_y, 1);
  });
  b.section("hough", [&](Binder& c) {
    c.field("r_min", p.hough.r_min, 1);
    c.field("r_max", p.hough.r_max, 1);
    c.field("vote_fraction", p.hough.vote_fraction, 0.0);
  });
  if (b.reading()) {
    if (p.binarize_channel > 2) Binder::fail("$.def_circle.binarize_channel", "must be -1, 0, 1 or 2");
    if (p.min_r >= p.max_r) Binder::fail("$.def_circle.min_r", "must be below max_r");
    if (p.hough.r_min > p.hough.r_max) Binder::fail("$.def_circle.hough.r_min", "must not exceed r_max");
  }
}

void bind_calib(Binder& b, hsvadapt::CalibConfig& c) {
  b.field("calib_window", c.calib_window);
  b.field("max_shift", c.max_shift, 0.0);
  b.field("deviation_gate", c.deviation_gate, 0.0);
  if (b.reading() && !(c.calib_window > 0)) Binder::fail("$.calib.calib_window", "must be positive");
}

void bind_sim(Binder& b, robotsim::EpisodeConfig& e) {
  using robotsim::Scenario;
  b.choice("scenario", e.scenario, {{"navigation", Scenario::Navigation}, {"docking", Scenario::Docking}});
  bool drift = e.imu.bump_drift;
  b.field("imu_drift", drift);
  e.imu.bump_drift = drift;
  b.section("imu", [&](Binder& c) {
    c.field("gyro_bias", e.imu.gyro_bias);
    c.field("noise_density", e.imu.noise_density, 0.0);
    c.field("bump_drift_sigma", e.imu.bump_drift_sigma, 0.0);
    c.field("bumps_per_m", e.imu.bumps_per_m, 0.0);
  });
  b.section("pid", [&](Binder& c) {
    c.field("kp", e.pid.kp);
    c.field("ki", e.pid.ki);
    c.field("kd", e.pid.kd);
    c.field("max_output", e.pid.max_output, 0.0);
    c.field("integral_limit", e.pid.integral_limit, 0.0);
  });
  b.section("battery", [&](Binder& c) {
    c.field("capacity_mah", e.battery.capacity_mah);
    c.field("drive_current_a", e.battery.drive_current_a, 0.0);
    c.field("spray_mah", e.battery.spray_mah, 0.0);
    c.field("low_voltage", e.battery.low_voltage);
    c.field("charge_current_a", e.battery.charge_current_a, 0.0);
    c.field("full_speed", e.battery.full_speed, 0.0);
    c.field("low_speed", e.battery.low_speed, 0.0);
  });
  b.field("initial_charge", e.initial_charge, 0.0);
  b.section("spray", [&](Binder& c) {
    c.field("delay", e.spray.delay, 0.0);
    c.field("jitter", e.spray.jitter, 0.0);
    c.field("zone_near", e.spray.zone_near);
    c.field("zone_far", e.spray.zone_far);
    c.field("measurement_sigma", e.spray.measurement_sigma, 0.0);
  });
  b.section("mission", [&](Binder& c) {
    c.field("rows", e.mission.rows, 1);
    c.field("max_deviation_deg", e.mission.max_deviation_deg, 0.0);
    c.field("steer_gain", e.mission.steer_gain, 0.0);
    c.field("row_end_arm_distance", e.mission.row_end_arm_distance, 0.0);
    c.field("turn_clearance", e.mission.turn_clearance, 0.0);
    c.field("funnel_tolerance", e.mission.funnel_tolerance, 0.0);
    c.field("return_stop_distance", e.mission.return_stop_distance, 0.0);
    c.field("backoff_distance", e.mission.backoff_distance, 0.0);
  });
  b.field("dt", e.dt);
  b.field("vision_period", e.vision_period);
  b.field("charge_dt", e.charge_dt);
  b.field("time_cap", e.time_cap);
  b.field("stop_on_collision", e.stop_on_collision);
  b.field("entry_offset", e.entry_offset, 0.0);
  b.field("station_gap", e.station_gap, 0.0);
  b.field("dock_start_distance", e.dock_start_distance);
  b.field("dock_max_offset", e.dock_max_offset, 0.0);
  b.field("dock_offset", e.dock_offset);
  b.field("dock_heading_jitter_deg", e.dock_heading_jitter_deg, 0.0);
}

void bind_all(Binder& b, RunConfig& c) {
  b.field("seed", c.seed);
  b.field("jobs", c.jobs, 1);
  b.section("field", [&](Binder& s) { bind_field(s, c.field); });
  b.section("dock", [&](Binder& s) { bind_dock(s, c.dock); });
  b.section("corpus", [&](Binder& s) { bind_corpus(s, c.corpus); });
  b.section("preprocess", [&](Binder& s) { bind_preprocess(s, c.preprocess); });
  b.section("detectors", [&](Binder& s) { bind_detectors(s, c.detectors); });
  b.section("row_end", [&](Binder& s) {
    s.field("threshold", c.row_end.threshold, 0.0);
    s.field("window", c.row_end.window, 1);
  });
  b.section("def_circle", [&](Binder& s) { bind_def_circle(s, c.def_circle); });
  b.section("calib", [&](Binder& s) { bind_calib(s, c.calib); });
  b.section("sim", [&](Binder& s) { bind_sim(s, c.sim); });
  b.section("bench", [&](Binder& s) { s.field("radius", c.bench.radius, 0.0); });
}

// Line and column of a byte offset, both 1-based.
std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

robotsim::EpisodeConfig RunConfig::episode() const {
  robotsim::EpisodeConfig e = sim;
  e.field = field;
  e.dock = dock;
  e.preprocess = preprocess;
  e.def_circle = def_circle;
  e.mission.row_end_fraction = row_end.threshold / 86400.0;
  e.mission.row_end_window = row_end.window;
  return e;
}

RunConfig parse_config(const json& j) {
  RunConfig cfg;
  json copy = j;
  Binder b(copy, "$", Binder::Mode::Read);
  bind_all(b, cfg);
  b.finish();
  cfg.corpus.seed = cfg.seed;
  cfg.corpus.jobs = cfg.jobs;
  cfg.calib.seed = cfg.seed;
  cfg.calib.preprocess = cfg.preprocess;
  try {
    cfg.field.validate();
    cfg.dock.validate();
    cfg.episode().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("$: ") + e.what());
  }
  return cfg;
}

RunConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_col(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ConfigError("malformed JSON at line " + std::to_string(line) + ", column " + std::to_string(col) + ": " +
                      e.what());
  }
  return parse_config(j);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot read config file");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

json to_json(const RunConfig& cfg) {
  json j = json::object();
  RunConfig copy = cfg;
  Binder b(j, "$", Binder::Mode::Write);
  bind_all(b, copy);
  return j;
}

nlohmann::json output_json(const RunConfig& cfg) {
  nlohmann::json j = to_json(cfg);
  j.erase("jobs");
  return j;
}

std::string config_hash(const RunConfig& cfg) { return fieldsim::hex64(fieldsim::fnv1a(output_json(cfg).dump())); }

}  // namespace rowpilot::cli
