#include "rowpilot/fieldsim.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "rowpilot/imgcore.hpp"
#include "rowpilot/version.hpp"

namespace rowpilot::fieldsim {

using Eigen::Vector2d;
using Eigen::Vector3d;
using json = nlohmann::json;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kCell = 0.1;  // lookup grid for weeds and stones, m

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Lattice noise in [-1, 1].
double lattice(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
  const std::uint64_t h = splitmix(seed ^ (static_cast<std::uint64_t>(ix) * 0x9e3779b97f4a7c15ull) ^
                                   (static_cast<std::uint64_t>(iy) * 0xc2b2ae3d27d4eb4full));
  return static_cast<double>(h >> 11) * (2.0 / 9007199254740992.0) - 1.0;
}

double value_noise(double x, double y, std::uint64_t seed) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  auto smooth = [](double t) { return t * t * (3 - 2 * t); };
  const double tx = smooth(x - fx), ty = smooth(y - fy);
  const double a = lattice(ix, iy, seed), b = lattice(ix + 1, iy, seed);
  const double c = lattice(ix, iy + 1, seed), d = lattice(ix + 1, iy + 1, seed);
  return (a + (b - a) * tx) * (1 - ty) + (c + (d - c) * tx) * ty;
}

std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5); }

// Sensor noise: a fixed table of standard normals indexed by a counter-based hash
// stream, far cheaper per sample than a fresh normal draw.
class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed) : state_(splitmix(seed)) {}
  double next() {
    if (left_ == 0) {
      bits_ = splitmix(state_++);
      left_ = 5;
    }
    const auto i = static_cast<std::size_t>(bits_ & (kSize - 1));
    bits_ >>= 12;
    --left_;
    return table()[i];
  }

 private:
  static constexpr std::size_t kSize = 4096;
  static const std::array<double, kSize>& table() {
    static const auto t = [] {
      std::array<double, kSize> a{};
      std::mt19937_64 rng(0x6e6f697365ull);
      std::normal_distribution<double> nd(0.0, 1.0);
      for (auto& v : a) v = nd(rng);
      return a;
    }();
    return t;
  }
  std::uint64_t state_;
  std::uint64_t bits_ = 0;
  int left_ = 0;
};

// Writes one pixel: HSV (hue in half-degrees) to RGB, then additive noise.
void put_pixel(Image& img, int x, int y, double h, double s, double v, double noise_sigma, NoiseStream& noise) {
  double deg = h * 2.0;
  deg -= 360.0 * std::floor(deg / 360.0);
  const imgcore::Rgb c = imgcore::hsv_to_rgb_exact({deg, std::clamp(s, 0.0, 1.0), std::clamp(v, 0.0, 1.0)});
  const int rgb[3] = {c.r, c.g, c.b};
  for (int k = 0; k < 3; ++k) img.at(x, y, k) = clamp_byte(rgb[k] + noise_sigma * noise.next());
}

// Unnormalized (forward, right, up) ray for every pixel, row-major.
std::vector<Vector3d> pixel_rays(const CameraModel& cam) {
  const double a = cam.pitch(), ca = std::cos(a), sa = std::sin(a);
  const double fx = cam.fx(), fy = cam.fy(), cx = cam.cx(), cy = cam.cy();
  std::vector<Vector3d> rays;
  rays.reserve(static_cast<std::size_t>(cam.width) * cam.height);
  for (int y = 0; y < cam.height; ++y) {
    const double yc = (y - cy) / fy;
    for (int x = 0; x < cam.width; ++x) rays.emplace_back(-sa * yc + ca, (x - cx) / fx, -ca * yc - sa);
  }
  return rays;
}

void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

// ---------------------------------------------------------------- camera

void CameraModel::validate() const {
  check(width > 0 && height > 0, "camera size must be positive");
  check(hfov_deg > 0 && hfov_deg < 180, "camera FOV must lie in (0, 180) degrees");
  check(tilt_deg >= 0 && tilt_deg <= 120, "camera tilt must lie in [0, 120] degrees");
  check(height_m > 0, "camera height must be positive");
}

double CameraModel::fx() const { return 0.5 * width / std::tan(0.5 * hfov_deg * kDeg); }

double CameraModel::pitch() const { return (90.0 - tilt_deg) * kDeg; }

double CameraModel::horizon_y() const { return cy() - fy() * std::tan(pitch()); }

Vector3d CameraModel::to_camera(const Vector3d& fru) const {
  const double a = pitch(), ca = std::cos(a), sa = std::sin(a);
  return {fru.y(), -fru.z() * ca - fru.x() * sa, fru.x() * ca - fru.z() * sa};
}

std::optional<Point2d> CameraModel::project(const Vector3d& fru) const {
  const Vector3d c = to_camera(fru);
  if (c.z() <= 1e-9) return std::nullopt;
  return Point2d(cx() + fx() * c.x() / c.z(), cy() + fy() * c.y() / c.z());
}

Vector3d CameraModel::ray(Point2d px) const {
  const double a = pitch(), ca = std::cos(a), sa = std::sin(a);
  const double xc = (px.x() - cx()) / fx(), yc = (px.y() - cy()) / fy();
  return {-sa * yc + ca, xc, -ca * yc - sa};
}

std::optional<Vector2d> CameraModel::ground_hit(Point2d px) const {
  const Vector3d d = ray(px);
  if (d.z() >= -1e-12) return std::nullopt;
  const double t = -height_m / d.z();
  return Vector2d(t * d.x(), t * d.y());
}

std::optional<Point2d> CameraModel::vanish(const Vector2d& fr) const {
  const Vector3d c = to_camera({fr.x(), fr.y(), 0.0});
  if (c.z() <= 1e-12) return std::nullopt;
  return Point2d(cx() + fx() * c.x() / c.z(), cy() + fy() * c.y() / c.z());
}

Vector2d Pose2d::forward() const { return {std::cos(heading), std::sin(heading)}; }
Vector2d Pose2d::right() const { return {std::sin(heading), -std::cos(heading)}; }

// ---------------------------------------------------------------- field

void FieldConfig::validate() const {
  check(aisle_width > 0, "aisle width must be positive");
  check(band_half_width >= 0, "band half-width must be non-negative");
  check(aisles >= 1, "need at least one aisle");
  check(row_length > 0, "row length must be positive");
  check(plant_height > 0 && plant_spacing > 0, "plant size and spacing must be positive");
  check(weed_density >= 0 && stone_density >= 0, "densities must be non-negative");
  check(value_scale > 0 && noise_sigma >= 0, "illumination and noise must be non-negative");
  camera.validate();
}

FieldScene::FieldScene(FieldConfig cfg, std::uint64_t layout_seed)
    : cfg_(std::move(cfg)), layout_seed_(layout_seed) {
  cfg_.validate();
  std::mt19937_64 rng(splitmix(layout_seed));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  const double sp = cfg_.plant_spacing, ph = cfg_.plant_height;

  plants_.resize(cfg_.croplines());
  for (auto& line : plants_) {
    for (double y0 = 0.5 * sp; y0 < cfg_.row_length; y0 += sp) {
      Plant p;
      p.y = std::clamp(y0 + (u01(rng) - 0.5) * 0.6 * sp, 0.0, cfg_.row_length);
      p.dx = 0.003 * n01(rng);
      p.rx = 0.4 * ph * (0.92 + 0.16 * u01(rng));
      p.ry = 0.5 * ph * (0.8 + 0.4 * u01(rng));
      p.dh = 2.5 * n01(rng);
      p.s = 0.45 + 0.3 * u01(rng);
      p.v = 0.38 + 0.2 * u01(rng);
      line.push_back(p);
    }
    std::sort(line.begin(), line.end(), [](const Plant& a, const Plant& b) { return a.y < b.y; });
  }

  const double x0 = -cfg_.pitch(), x1 = cfg_.aisles * cfg_.pitch() + cfg_.pitch();
  const double y0 = -1.0, y1 = cfg_.row_length + 1.0;
  const double area = (x1 - x0) * (y1 - y0);
  grid_x0_ = x0 - 0.5;
  grid_y0_ = y0 - 0.5;
  grid_w_ = static_cast<int>(std::ceil((x1 - x0 + 1.0) / kCell));
  grid_h_ = static_cast<int>(std::ceil((y1 - y0 + 1.0) / kCell));
  weed_cells_.assign(static_cast<std::size_t>(grid_w_) * grid_h_, {});
  stone_cells_.assign(weed_cells_.size(), {});
  auto cell_of = [&](const Vector2d& p) {
    const int cx = std::clamp(static_cast<int>((p.x() - grid_x0_) / kCell), 0, grid_w_ - 1);
    const int cy = std::clamp(static_cast<int>((p.y() - grid_y0_) / kCell), 0, grid_h_ - 1);
    return static_cast<std::size_t>(cy) * grid_w_ + cx;
  };

  std::poisson_distribution<int> n_weeds(cfg_.weed_density * area);
  const int nw = cfg_.weed_density > 0 ? n_weeds(rng) : 0;
  for (int i = 0; i < nw; ++i) {
    const Vector2d p(x0 + (x1 - x0) * u01(rng), y0 + (y1 - y0) * u01(rng));
    const double r = 0.008 + 0.017 * u01(rng);
    // Weeds grow in the aisles; canopy overlaps are left to the crop blobs.
    const double off = p.x() - 0.5 * cfg_.curvature * p.y() * p.y();
    const double to_line = std::abs(off - std::round(off / cfg_.pitch()) * cfg_.pitch());
    if (to_line < 0.05 + r) continue;
    weed_cells_[cell_of(p)].push_back(static_cast<std::uint32_t>(weeds_.size()));
    weeds_.push_back({p, r});
  }
  std::poisson_distribution<int> n_stones(cfg_.stone_density * area);
  const int ns = cfg_.stone_density > 0 ? n_stones(rng) : 0;
  for (int i = 0; i < ns; ++i) {
    Stone s;
    s.position = Vector2d(x0 + (x1 - x0) * u01(rng), y0 + (y1 - y0) * u01(rng));
    s.rx = 0.005 + 0.015 * u01(rng);
    s.ry = s.rx * (0.6 + 0.6 * u01(rng));
    s.v = 0.45 + 0.25 * u01(rng);
    stone_cells_[cell_of(s.position)].push_back(static_cast<std::uint32_t>(stones_.size()));
    stones_.push_back(s);
  }
}

bool FieldScene::inside(const Pose2d& pose) const {
  const double xmin = -1.0, xmax = cfg_.aisles * cfg_.pitch() + 1.0;
  const double xoff = pose.x - 0.5 * cfg_.curvature * pose.y * pose.y;
  return std::isfinite(pose.heading) && xoff >= xmin && xoff <= xmax && pose.y >= -1.5 &&
         pose.y <= cfg_.row_length + 1.5;
}

std::pair<int, int> FieldScene::flanking(const Pose2d& pose) const {
  const double xoff = pose.x - 0.5 * cfg_.curvature * pose.y * pose.y;
  const int k = static_cast<int>(std::floor(xoff / cfg_.pitch()));
  return {k, k + 1};
}

std::optional<Point2d> FieldScene::vanishing_point(const Pose2d& pose) const {
  // Tangent direction of every cropline a short way ahead; all croplines share it.
  const double ahead = 0.3;
  const double sign = pose.forward().y() >= 0 ? 1.0 : -1.0;
  const double yt = pose.y + sign * ahead;
  Vector2d t(cfg_.curvature * yt * sign, sign);
  t.normalize();
  if (t.dot(pose.forward()) <= 1e-6) return std::nullopt;
  return cfg_.camera.vanish({t.dot(pose.forward()), t.dot(pose.right())});
}

double FieldScene::plant_hue_at(double sim_hours) const {
  return cfg_.plant_hue + cfg_.hue_drift_per_hour * sim_hours;
}

double FieldScene::soil_texture(double x, double y) const {
  return 0.65 * value_noise(x / 0.03, y / 0.03, layout_seed_) +
         0.35 * value_noise(x / 0.008, y / 0.008, layout_seed_ ^ 0x5eed);
}

FieldScene::Surface FieldScene::surface(double x, double y, double hue) const {
  Surface out;
  const double tex = soil_texture(x, y);
  // Crop canopy.
  const double pitch = cfg_.pitch();
  const double bend = 0.5 * cfg_.curvature * y * y;
  const int kc = static_cast<int>(std::lround((x - bend) / pitch));
  const double reach = 0.7 * cfg_.plant_height;
  for (int k = std::max(0, kc - 1); k <= std::min(cfg_.aisles, kc + 1); ++k) {
    const double lx = x - (k * pitch + bend);
    if (std::abs(lx) > reach) continue;
    const auto& line = plants_[k];
    auto it = std::lower_bound(line.begin(), line.end(), y - reach,
                               [](const Plant& p, double v) { return p.y < v; });
    for (; it != line.end() && it->y <= y + reach; ++it) {
      const double ex = (lx - it->dx) / it->rx, ey = (y - it->y) / it->ry;
      const double d2 = ex * ex + ey * ey;
      if (d2 <= 1.0) {
        out.material = Material::Plant;
        out.cropline = k;
        out.h = hue + it->dh + 1.5 * tex;
        out.s = it->s + 0.05 * tex;
        out.v = it->v * (0.8 + 0.2 * (1.0 - d2)) + 0.04 * tex;
        return out;
      }
    }
  }
  const int gx = static_cast<int>(std::floor((x - grid_x0_) / kCell));
  const int gy = static_cast<int>(std::floor((y - grid_y0_) / kCell));
  for (int cy = gy - 1; cy <= gy + 1; ++cy)
    for (int cx = gx - 1; cx <= gx + 1; ++cx) {
      if (cx < 0 || cy < 0 || cx >= grid_w_ || cy >= grid_h_) continue;
      const std::size_t cell = static_cast<std::size_t>(cy) * grid_w_ + cx;
      for (auto i : weed_cells_[cell]) {
        const Weed& w = weeds_[i];
        if ((Vector2d(x, y) - w.position).squaredNorm() <= w.radius * w.radius) {
          out.material = Material::Weed;
          out.h = hue - 8.0 + 2.0 * tex;
          out.s = 0.6 + 0.1 * tex;
          out.v = 0.45 + 0.05 * tex;
          return out;
        }
      }
      for (auto i : stone_cells_[cell]) {
        const Stone& s = stones_[i];
        const double ex = (x - s.position.x()) / s.rx, ey = (y - s.position.y()) / s.ry;
        if (ex * ex + ey * ey <= 1.0) {
          out.material = Material::Stone;
          out.h = 15;
          out.s = 0.08;
          out.v = s.v + 0.05 * tex;
          return out;
        }
      }
    }
  out.h = 12.0 + 3.0 * tex;
  out.s = 0.45 + 0.1 * tex;
  out.v = 0.38 + 0.12 * tex;
  return out;
}

FrameWithLabels FieldScene::render(const Pose2d& pose, double sim_hours, std::uint64_t frame_seed) const {
  if (!inside(pose)) throw std::invalid_argument("pose is outside the field");
  const CameraModel& cam = cfg_.camera;
  const int w = cam.width, h = cam.height;
  FrameWithLabels out;
  out.image = Image(w, h, 3);
  out.seed = frame_seed;
  out.meta.scene = "field";
  out.meta.pose = pose;
  out.meta.sim_hours = sim_hours;
  out.meta.plant_hue = plant_hue_at(sim_hours);

  std::vector<std::uint8_t> mask(static_cast<std::size_t>(w) * h, 0);
  const Rect roi = imgcore::bottom_roi(w, h);
  const auto [left, right] = flanking(pose);
  double sum[2][3] = {{0, 0, 0}, {0, 0, 0}};  // n, sum x, sum y per flanking cropline

  NoiseStream noise(frame_seed ^ 0xf1e1d);
  const Vector2d pos = pose.position(), fw = pose.forward(), rt = pose.right();
  const double hue = out.meta.plant_hue;
  const double far = 40.0, horizon = cam.horizon_y();
  const auto rays = pixel_rays(cam);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Vector3d& d = rays[static_cast<std::size_t>(y) * w + x];
      const double t = d.z() < -1e-12 ? -cam.height_m / d.z() : 0.0;
      if (t <= 0.0 || t * d.x() > far) {
        // Sky, brighter towards the horizon.
        const double q = std::clamp((horizon - y) / std::max(1.0, horizon), 0.0, 1.0);
        put_pixel(out.image, x, y, 105.0, 0.15 + 0.3 * q, (0.9 - 0.1 * q) * cfg_.value_scale, cfg_.noise_sigma, noise);
        continue;
      }
      const Vector2d p = pos + (t * d.x()) * fw + (t * d.y()) * rt;
      const Surface s = surface(p.x(), p.y(), hue);
      put_pixel(out.image, x, y, s.h, s.s, s.v * cfg_.value_scale, cfg_.noise_sigma, noise);
      if (s.material != Material::Plant) continue;
      mask[static_cast<std::size_t>(y) * w + x] = 255;
      if (y < roi.y) continue;
      const int side = s.cropline == left ? 0 : s.cropline == right ? 1 : -1;
      if (side < 0) continue;
      sum[side][0] += 1;
      sum[side][1] += x;
      sum[side][2] += y - roi.y;
    }
  }
  out.row_mask = Mask(w, h, std::move(mask));
  out.vp = vanishing_point(pose);
  // Same speck floor as the contour detector.
  const double floor = 0.005 * static_cast<double>(roi.width) * roi.height;
  if (sum[0][0] >= floor && sum[1][0] >= floor) {
    const Point2d a(sum[0][1] / sum[0][0], sum[0][2] / sum[0][0]);
    const Point2d b(sum[1][1] / sum[1][0], sum[1][2] / sum[1][0]);
    out.target = Point2d((a.x() + b.x()) / 2.0, (a.y() + b.y()) / 2.0 + roi.y);
  }
  return out;
}

FrameWithLabels gen_field_frame(const FieldConfig& cfg, const Pose2d& pose, std::uint64_t seed, double sim_hours) {
  return FieldScene(cfg, seed).render(pose, sim_hours, seed);
}

// ---------------------------------------------------------------- dock

void DockConfig::validate() const {
  camera.validate();
  check(station.dot_radius > 0 && station.dot_spacing > 0, "dot size and spacing must be positive");
  check(glare_rate >= 0 && glare_radius_min > 0 && glare_radius_max >= glare_radius_min, "bad glare parameters");
  check(noise_sigma >= 0 && value_scale > 0, "bad illumination parameters");
}

namespace {

// Lens-relative frame for the dock: x right of the station axis, y towards the face, z up.
struct DockView {
  Vector3d lens;
  Vector2d fw, rt;

  DockView(const CameraModel& cam, double distance, double offset, double yaw)
      : lens(offset, -distance, cam.height_m),
        fw(-std::sin(yaw), std::cos(yaw)),
        rt(std::cos(yaw), std::sin(yaw)) {}

  Vector3d fru(const Vector3d& p) const {
    const Vector3d d = p - lens;
    return {d.x() * fw.x() + d.y() * fw.y(), d.x() * rt.x() + d.y() * rt.y(), d.z()};
  }
  Vector3d world_dir(const Vector3d& r) const {
    return {r.x() * fw.x() + r.y() * rt.x(), r.x() * fw.y() + r.y() * rt.y(), r.z()};
  }
};

}  // namespace

std::vector<CircleLabel> dock_labels(const DockConfig& cfg, double distance, double offset, double yaw) {
  if (!(distance > 0)) throw std::invalid_argument("dock distance must be positive");
  const DockView view(cfg.camera, distance, offset, yaw);
  const auto& st = cfg.station;
  std::vector<CircleLabel> out;
  for (int i = -1; i <= 1; ++i) {
    const Vector3d c = view.fru({i * st.dot_spacing, 0.0, st.dot_height});
    const auto px = cfg.camera.project(c);
    if (!px) continue;
    const double depth = cfg.camera.to_camera(c).z();
    out.push_back({px->x(), px->y(), cfg.camera.fx() * st.dot_radius / depth});
  }
  return out;
}

FrameWithLabels gen_dock_frame(const DockConfig& cfg, double distance, double offset, std::uint64_t seed,
                               double yaw) {
  cfg.validate();
  if (!(distance > 0)) throw std::invalid_argument("dock distance must be positive");
  const CameraModel& cam = cfg.camera;
  const auto& st = cfg.station;
  const int w = cam.width, h = cam.height;
  const DockView view(cam, distance, offset, yaw);
  FrameWithLabels out;
  out.image = Image(w, h, 3);
  out.row_mask = Mask(w, h);
  out.seed = seed;
  out.meta.scene = "dock";
  out.meta.distance = distance;
  out.meta.offset = offset;
  out.meta.yaw = yaw;
  out.circles = dock_labels(cfg, distance, offset, yaw);

  std::mt19937_64 rng(splitmix(seed ^ 0xd0c));
  NoiseStream noise(seed ^ 0xd0c);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto rays = pixel_rays(cam);
  const imgcore::HsvF dot = imgcore::rgb_to_hsv_exact({st.dot_rgb[0], st.dot_rgb[1], st.dot_rgb[2]});
  const std::uint64_t tex_seed = splitmix(seed);
  const double vs = cfg.value_scale;

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Vector3d d = view.world_dir(rays[static_cast<std::size_t>(y) * w + x]);
      double hh = 105, ss = 0.2, vv = 0.9;  // sky
      bool done = false;
      if (d.y() > 1e-9) {
        const double t = -view.lens.y() / d.y();
        const Vector3d p = view.lens + t * d;
        if (p.z() >= 0 && p.z() <= st.panel_height && std::abs(p.x()) <= 0.5 * st.panel_width) {
          done = true;
          hh = 60, ss = 0.1, vv = 0.22 + 0.03 * value_noise(p.x() / 0.05, p.z() / 0.05, tex_seed);
          if (std::abs(p.x()) <= 0.5 * st.funnel_width && p.z() <= st.funnel_height) {
            hh = 112, ss = 0.75, vv = 0.55;
          }
          for (int i = -1; i <= 1; ++i) {
            const double dx = p.x() - i * st.dot_spacing, dz = p.z() - st.dot_height;
            if (dx * dx + dz * dz <= st.dot_radius * st.dot_radius) hh = dot.h / 2.0, ss = dot.s, vv = dot.v;
          }
        }
      }
      if (!done && d.z() < -1e-12) {
        const double t = -view.lens.z() / d.z();
        const Vector3d p = view.lens + t * d;
        if (t < 60.0) {
          const double tex = 0.65 * value_noise(p.x() / 0.03, p.y() / 0.03, tex_seed) +
                             0.35 * value_noise(p.x() / 0.01, p.y() / 0.01, tex_seed ^ 0x77);
          hh = 12 + 3 * tex, ss = 0.45 + 0.1 * tex, vv = 0.38 + 0.12 * tex;
        }
      }
      put_pixel(out.image, x, y, hh, ss, vv * vs, cfg.noise_sigma, noise);
    }
  }

  if (cfg.glare && cfg.glare_rate > 0) {
    std::poisson_distribution<int> count(cfg.glare_rate);
    const int n = count(rng);
    for (int g = 0; g < n; ++g) {
      const double gx = w * u01(rng), gy = h * u01(rng);
      const double gr = cfg.glare_radius_min + (cfg.glare_radius_max - cfg.glare_radius_min) * u01(rng);
      const double peak = 150.0 + 250.0 * u01(rng);  // strong flares clip to a white core
      const int x0 = std::max(0, static_cast<int>(gx - gr)), x1 = std::min(w - 1, static_cast<int>(gx + gr) + 1);
      const int y0 = std::max(0, static_cast<int>(gy - gr)), y1 = std::min(h - 1, static_cast<int>(gy + gr) + 1);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double q = ((x - gx) * (x - gx) + (y - gy) * (y - gy)) / (gr * gr);
          if (q >= 1.0) continue;
          const double add = peak * (1.0 - q) * (1.0 - q);
          for (int k = 0; k < 3; ++k) out.image.at(x, y, k) = clamp_byte(out.image.at(x, y, k) + add);
        }
    }
  }
  return out;
}

// ---------------------------------------------------------------- corpus

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 15];
  return s;
}

void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot rename " + tmp.string() + ": " + ec.message());
}

void write_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  write_atomic(path, std::string(bytes.begin(), bytes.end()));
}

FrameWithLabels corpus_frame(const FieldConfig& field, const DockConfig& dock, const CorpusOptions& opt, int index) {
  const std::uint64_t seed = opt.seed ^ static_cast<std::uint64_t>(index);
  std::mt19937_64 rng(splitmix(seed));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  if (opt.scene == SceneKind::Dock) {
    const double d = opt.min_distance + (opt.max_distance - opt.min_distance) * u01(rng);
    const double o = opt.max_offset * (2.0 * u01(rng) - 1.0);
    const double yaw = std::atan2(o, d) + opt.aim_jitter_deg * kDeg * (2.0 * u01(rng) - 1.0);
    return gen_dock_frame(dock, d, o, seed, yaw);
  }
  const int aisle = static_cast<int>(u01(rng) * field.aisles) % field.aisles;
  const bool up = u01(rng) < 0.5;
  const double along = 0.3 + (field.row_length - 1.1) * u01(rng);
  Pose2d pose;
  pose.y = up ? along : field.row_length - along;
  pose.x = field.aisle_center_x(aisle, pose.y) + opt.lateral_jitter * (2.0 * u01(rng) - 1.0);
  const double row_dir = up ? std::numbers::pi / 2 : -std::numbers::pi / 2;
  pose.heading = row_dir + opt.heading_jitter_deg * kDeg * (2.0 * u01(rng) - 1.0);
  const double hours = opt.max_hours * u01(rng);
  return FieldScene(field, seed).render(pose, hours, seed);
}

namespace {

json point_json(const std::optional<Point2d>& p) {
  if (!p) return nullptr;
  return json::array({p->x(), p->y()});
}

std::optional<Point2d> point_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return Point2d(j.at(0).get<double>(), j.at(1).get<double>());
}

}  // namespace

std::string manifest_line(const ManifestEntry& e) {
  json j;
  j["id"] = e.id;
  j["image"] = e.image;
  j["mask"] = e.mask;
  j["scene"] = e.meta.scene;
  j["seed"] = e.seed;
  j["vp"] = point_json(e.vp);
  j["target"] = point_json(e.target);
  json circles = json::array();
  for (const auto& c : e.circles) circles.push_back({c.cx, c.cy, c.r});
  j["circles"] = circles;
  j["meta"] = {{"distance", e.meta.distance}, {"offset", e.meta.offset}, {"yaw", e.meta.yaw},
               {"sim_hours", e.meta.sim_hours}, {"plant_hue", e.meta.plant_hue},
               {"pose", {e.meta.pose.x, e.meta.pose.y, e.meta.pose.heading}}};
  return j.dump();
}

ManifestEntry parse_manifest_line(const std::string& line) {
  const json j = json::parse(line);
  ManifestEntry e;
  e.id = j.at("id").get<std::string>();
  e.image = j.at("image").get<std::string>();
  e.mask = j.value("mask", std::string());
  e.seed = j.value("seed", std::uint64_t{0});
  e.vp = point_from(j.value("vp", json()));
  e.target = point_from(j.value("target", json()));
  for (const auto& c : j.value("circles", json::array()))
    e.circles.push_back({c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()});
  e.meta.scene = j.value("scene", std::string("field"));
  if (j.contains("meta")) {
    const json& m = j.at("meta");
    e.meta.distance = m.value("distance", 0.0);
    e.meta.offset = m.value("offset", 0.0);
    e.meta.yaw = m.value("yaw", 0.0);
    e.meta.sim_hours = m.value("sim_hours", 0.0);
    e.meta.plant_hue = m.value("plant_hue", 0.0);
    if (m.contains("pose")) {
      const json& p = m.at("pose");
      e.meta.pose = {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()};
    }
  }
  return e;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  std::ifstream f(dir / kManifestFile);
  if (!f) throw std::runtime_error("cannot open manifest in " + dir.string());
  std::vector<ManifestEntry> out;
  std::string line;
  int n = 0;
  while (std::getline(f, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(parse_manifest_line(line));
    } catch (const json::exception& e) {
      throw std::runtime_error("manifest line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

CorpusSummary gen_corpus(const FieldConfig& field, const DockConfig& dock, const CorpusOptions& opt,
                         const std::filesystem::path& out_dir, const std::string& config_hash) {
  if (opt.frames < 1) throw std::invalid_argument("corpus needs at least one frame");
  field.validate();
  dock.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw std::runtime_error("cannot create output directory " + out_dir.string());

  std::vector<ManifestEntry> entries(opt.frames);
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (int i = next++; i < opt.frames; i = next++) {
      try {
        const FrameWithLabels f = corpus_frame(field, dock, opt, i);
        char id[32];
        std::snprintf(id, sizeof id, "frame_%03d", i);
        ManifestEntry& e = entries[i];
        e.id = id;
        e.image = e.id + ".ppm";
        write_atomic(out_dir / e.image, encode_pnm(f.image));
        if (opt.scene == SceneKind::Field) {
          e.mask = e.id + "_mask.pgm";
          write_atomic(out_dir / e.mask, encode_pnm(f.row_mask.to_image()));
        }
        e.vp = f.vp;
        e.target = f.target;
        e.circles = f.circles;
        e.seed = f.seed;
        e.meta = f.meta;
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (int t = 1; t < std::max(1, opt.jobs); ++t) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);

  std::string manifest;
  for (const auto& e : entries) manifest += manifest_line(e) + "\n";
  write_atomic(out_dir / kManifestFile, manifest);

  CorpusSummary s;
  s.scene = opt.scene == SceneKind::Field ? "field" : "dock";
  s.frames = opt.frames;
  s.seed = opt.seed;
  s.config_hash = config_hash;
  s.manifest_hash = hex64(fnv1a(manifest));
  const json j = {{"scene", s.scene}, {"frames", s.frames}, {"seed", s.seed}, {"config_hash", s.config_hash},
                  {"manifest_hash", s.manifest_hash}, {"version", kVersion}};
  write_atomic(out_dir / kSummaryFile, j.dump(2) + "\n");
  return s;
}

}  // namespace rowpilot::fieldsim
