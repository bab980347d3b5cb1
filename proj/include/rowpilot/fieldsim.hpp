#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "rowpilot/image.hpp"

// Synthetic scenes with exact labels: crop-row frames and charging-station frames.
namespace rowpilot::fieldsim {

// Ideal pinhole camera pitched down from the horizontal. Robot-frame points are
// (forward, right, up) relative to the lens.
struct CameraModel {
  int width = 360;
  int height = 240;
  double hfov_deg = 136.0;
  double height_m = 0.12;
  double tilt_deg = 50.0;  // optical axis angle from the downward vertical

  void validate() const;

  double fx() const;
  double fy() const { return fx(); }
  double cx() const { return (width - 1) / 2.0; }
  double cy() const { return (height - 1) / 2.0; }
  double pitch() const;  // radians below the horizontal
  double horizon_y() const;

  // (right, down, depth) in camera coordinates.
  Eigen::Vector3d to_camera(const Eigen::Vector3d& fru) const;
  std::optional<Point2d> project(const Eigen::Vector3d& fru) const;
  // Pixel ray in (forward, right, up); not normalized.
  Eigen::Vector3d ray(Point2d px) const;
  // (forward, right) ground point seen at `px`, or nullopt above the horizon.
  std::optional<Eigen::Vector2d> ground_hit(Point2d px) const;
  // Image point of the vanishing direction (forward, right) on the ground plane.
  std::optional<Point2d> vanish(const Eigen::Vector2d& fr) const;
};

// Planar robot pose in the field frame: rows run along +y, heading counter-clockwise from +x.
struct Pose2d {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;

  Eigen::Vector2d position() const { return {x, y}; }
  Eigen::Vector2d forward() const;
  Eigen::Vector2d right() const;
};

struct FieldConfig {
  double aisle_width = 0.25;       // free ground between stem bands, m
  double band_half_width = 0.02;   // stem band around each cropline centre, m
  int aisles = 6;
  double row_length = 3.0;         // m
  double curvature = 0.0;          // 1/m, rows bend as x = x0 + curvature * y^2 / 2
  double plant_height = 0.10;      // m; canopy blob size scales with it
  double plant_spacing = 0.03;     // m
  double weed_density = 8.0;       // per m^2
  double stone_density = 6.0;      // per m^2
  double plant_hue = 50.0;         // half-degrees
  double hue_drift_per_hour = 0.0; // half-degrees per simulated hour
  double value_scale = 1.0;
  double noise_sigma = 4.0;        // per-channel pixel noise
  CameraModel camera;

  void validate() const;
  double pitch() const { return aisle_width + 2.0 * band_half_width; }
  double cropline_x(int k, double y) const { return k * pitch() + 0.5 * curvature * y * y; }
  double aisle_center_x(int aisle, double y) const { return cropline_x(aisle, y) + 0.5 * pitch(); }
  int croplines() const { return aisles + 1; }
};

struct CircleLabel {
  double cx = 0.0;
  double cy = 0.0;
  double r = 0.0;
};

struct FrameMeta {
  std::string scene;          // "field" or "dock"
  double distance = 0.0;      // dock: lens to station face, m
  double offset = 0.0;        // dock: lateral offset right of the station axis, m
  double yaw = 0.0;           // dock: heading relative to facing the station, rad
  double sim_hours = 0.0;
  double plant_hue = 0.0;     // field: hue actually rendered, half-degrees
  Pose2d pose;
};

struct FrameWithLabels {
  Image image;
  std::optional<Point2d> vp;
  // Midpoint of the centroids of the two flanking croplines inside the ROI.
  std::optional<Point2d> target;
  Mask row_mask;
  std::vector<CircleLabel> circles;
  std::uint64_t seed = 0;
  FrameMeta meta;
};

struct Weed {
  Eigen::Vector2d position;
  double radius = 0.0;
};

// A field with a fixed layout; frames differ only in pose, time and sensor noise.
class FieldScene {
 public:
  FieldScene(FieldConfig cfg, std::uint64_t layout_seed);

  const FieldConfig& config() const { return cfg_; }
  const std::vector<Weed>& weeds() const { return weeds_; }

  bool inside(const Pose2d& pose) const;
  // Croplines immediately left and right of the lens, by index.
  std::pair<int, int> flanking(const Pose2d& pose) const;
  // Tangent-line intersection of the flanking croplines, projected.
  std::optional<Point2d> vanishing_point(const Pose2d& pose) const;
  double plant_hue_at(double sim_hours) const;

  // Throws std::invalid_argument when the pose is outside the field.
  FrameWithLabels render(const Pose2d& pose, double sim_hours, std::uint64_t frame_seed) const;

  struct Plant {
    double y = 0.0;
    double dx = 0.0;
    double rx = 0.0;
    double ry = 0.0;
    double dh = 0.0;
    double s = 0.0;
    double v = 0.0;
  };
  struct Stone {
    Eigen::Vector2d position;
    double rx = 0.0;
    double ry = 0.0;
    double v = 0.0;
  };

 private:
  enum class Material { Soil, Plant, Weed, Stone };
  struct Surface {
    Material material = Material::Soil;
    int cropline = -1;
    double h = 0, s = 0, v = 0;  // hue in half-degrees, s and v in [0,1]
  };
  Surface surface(double x, double y, double hue) const;
  double soil_texture(double x, double y) const;

  FieldConfig cfg_;
  std::uint64_t layout_seed_;
  std::vector<std::vector<Plant>> plants_;  // per cropline, sorted by y
  std::vector<Weed> weeds_;
  std::vector<Stone> stones_;
  // Coarse grid over weeds and stones for point lookups.
  double grid_x0_ = 0, grid_y0_ = 0;
  int grid_w_ = 0, grid_h_ = 0;
  std::vector<std::vector<std::uint32_t>> weed_cells_, stone_cells_;
};

FrameWithLabels gen_field_frame(const FieldConfig& cfg, const Pose2d& pose, std::uint64_t seed,
                                double sim_hours = 0.0);

struct StationModel {
  double dot_radius = 0.11;       // m
  double dot_spacing = 0.30;      // centre to centre, m
  double dot_height = 0.16;       // dot centres above ground, m
  double panel_width = 1.2;
  double panel_height = 0.35;
  double funnel_width = 0.30;
  double funnel_height = 0.04;
  std::array<int, 3> dot_rgb{230, 120, 170};
};

struct DockConfig {
  CameraModel camera{360, 240, 60.0, 0.12, 85.0};
  StationModel station;
  bool glare = true;
  double glare_rate = 2.0;        // mean blobs per frame
  double glare_radius_min = 12.0; // px
  double glare_radius_max = 60.0;
  double noise_sigma = 3.0;
  double value_scale = 1.0;

  void validate() const;
};

// Station-face circle labels for a lens at `distance` in front of the face,
// `offset` metres right of its axis, rotated `yaw` counter-clockwise.
std::vector<CircleLabel> dock_labels(const DockConfig& cfg, double distance, double offset, double yaw = 0.0);

FrameWithLabels gen_dock_frame(const DockConfig& cfg, double distance, double offset, std::uint64_t seed,
                               double yaw = 0.0);

// Corpus on disk: one PPM per frame, a PGM row mask for field frames, a JSON-lines
// manifest and a summary.
enum class SceneKind { Field, Dock };

struct CorpusOptions {
  SceneKind scene = SceneKind::Field;
  int frames = 62;
  std::uint64_t seed = 1;
  int jobs = 1;
  // Field sampling.
  double lateral_jitter = 0.03;       // m
  double heading_jitter_deg = 4.0;
  double max_hours = 0.0;
  // Dock sampling.
  double min_distance = 0.9;
  double max_distance = 3.1;
  double max_offset = 0.5;
  double aim_jitter_deg = 4.0;
};

struct ManifestEntry {
  std::string id;
  std::string image;
  std::string mask;  // empty for dock frames
  std::optional<Point2d> vp;
  std::optional<Point2d> target;
  std::vector<CircleLabel> circles;
  std::uint64_t seed = 0;
  FrameMeta meta;
};

struct CorpusSummary {
  std::string scene;
  int frames = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string manifest_hash;
};

inline constexpr const char* kManifestFile = "manifest.jsonl";
inline constexpr const char* kSummaryFile = "summary.json";

// Renders a single corpus frame; pure in (configs, options, index).
FrameWithLabels corpus_frame(const FieldConfig& field, const DockConfig& dock, const CorpusOptions& opt,
                             int index);

// Throws std::runtime_error when `out_dir` cannot be written.
CorpusSummary gen_corpus(const FieldConfig& field, const DockConfig& dock, const CorpusOptions& opt,
                         const std::filesystem::path& out_dir, const std::string& config_hash);

std::string manifest_line(const ManifestEntry& e);
ManifestEntry parse_manifest_line(const std::string& line);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);

// Writes `bytes` to `path` through a sibling temp file and a rename.
void write_atomic(const std::filesystem::path& path, const std::string& bytes);
void write_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

}  // namespace rowpilot::fieldsim
