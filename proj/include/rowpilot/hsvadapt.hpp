#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rowpilot/errors.hpp"
#include "rowpilot/image.hpp"
#include "rowpilot/rowdetect.hpp"

// Self-adjusting HSV calibration: hue samples around the cropline centroids shift the
// active range while drift is small; Otsu on the hue histogram takes over when it is not.
namespace rowpilot::hsvadapt {

inline constexpr double kDeviationGateDeg = 5.0;
inline constexpr std::size_t kBufferCapacity = 10;
inline constexpr int kPixelsPerCircle = 50;
inline constexpr double kMaxHueShift = 30.0;
inline constexpr int kHueBins = 180;

// Circular arithmetic on half-degree hue (period 180).
double hue_wrap(double h);
// Signed difference a - b in (-90, 90].
double hue_delta(double a, double b);

struct HsvMean {
  double h = 0.0;
  double s = 0.0;
  double v = 0.0;
};

// Running sums for pooled means with a circular hue.
class HsvAccumulator {
 public:
  void add(int h, int s, int v);
  std::size_t count() const { return n_; }
  // Throws std::logic_error when empty.
  HsvMean mean() const;

 private:
  double sin_ = 0, cos_ = 0, s_ = 0, v_ = 0;
  std::size_t n_ = 0;
};

// Radius of the sampling circle: one fifth of the average area, as a disk.
inline double sample_radius(double area_avg) { return std::sqrt(area_avg / (5.0 * std::numbers::pi)); }

// Draws `count` pixels uniformly from the disk around `center` (clipped to the frame)
// into `acc`. Returns false, drawing nothing, when the radius is below one pixel or
// the clipped disk is empty.
bool sample_into(HsvAccumulator& acc, const Image& hsv, Point2d center, double area_avg, std::mt19937_64& rng,
                 int count = kPixelsPerCircle);

std::optional<HsvMean> sample_pixels(const Image& hsv, Point2d center, double area_avg, std::mt19937_64& rng,
                                     int count = kPixelsPerCircle);

struct CalibrationSample {
  double timestamp = 0.0;
  Point2d c1 = Point2d::Zero();
  Point2d c2 = Point2d::Zero();
  std::int64_t area1 = 0;
  std::int64_t area2 = 0;
  HsvMean mean_hsv;
};

struct CalibrationState {
  std::deque<CalibrationSample> buffer;
  HsvRange active = HsvRange::green_crop();
  // Hue the active range is currently centred on; unset until the first window closes.
  std::optional<double> previous_mean_h;
};

struct CropObservation {
  Point2d c1 = Point2d::Zero();
  Point2d c2 = Point2d::Zero();
  std::int64_t area1 = 0;
  std::int64_t area2 = 0;
};

// Appends a sample when |deviation| < 5 degrees and both areas are positive; the
// oldest sample is evicted beyond ten. Pixels are drawn from both circles and pooled.
void record_sample(CalibrationState& state, const Image& hsv, const CropObservation& obs, double deviation_deg,
                   double timestamp, std::mt19937_64& rng);

struct PriorUpdate {
  HsvRange range;
  double mean_h = 0.0;
  double delta = 0.0;
  int applied_shift = 0;
  bool fallback = false;
};

// Pure: the range the buffer asks for. Empty buffer leaves the range unchanged.
PriorUpdate prior_update(const CalibrationState& state, double max_shift = kMaxHueShift);
HsvRange shift_hue(const HsvRange& range, int shift);
// Applies a non-fallback update to the state.
void commit(CalibrationState& state, const PriorUpdate& update);

class HueHistogram {
 public:
  HueHistogram() { bins_.fill(0); }
  explicit HueHistogram(const std::array<std::int64_t, kHueBins>& bins) : bins_(bins) {}

  // Hue of every pixel whose S and V fall inside the S/V extent of `sv_gate`
  // (all pixels when absent).
  static HueHistogram from_image(const Image& hsv, const std::optional<HsvRange>& sv_gate = std::nullopt);

  std::int64_t& operator[](int h) { return bins_[h]; }
  std::int64_t operator[](int h) const { return bins_[h]; }
  const std::array<std::int64_t, kHueBins>& bins() const { return bins_; }
  std::int64_t total() const;
  int nonempty() const;

 private:
  std::array<std::int64_t, kHueBins> bins_;
};

// Last bin of the lower class: bins [0,t] vs [t+1,179], maximizing between-class
// variance with ties going to the lowest t. Throws DetectionError{DegenerateHistogram}
// with fewer than two non-empty bins.
int otsu_threshold(const HueHistogram& hist);

inline constexpr int kPlantHueLow = 21;
inline constexpr int kPlantHueHigh = 90;

// New range from Otsu on the frame's hue histogram: the class whose mean hue lies in
// the plant band supplies the H bounds; S and V come from `old_range`.
HsvRange otsu_fallback(const Image& hsv, const HsvRange& old_range);

struct CalibConfig {
  // Simulated seconds per adaptation window.
  double calib_window = 3600.0;
  double max_shift = kMaxHueShift;
  double deviation_gate = kDeviationGateDeg;
  rowdetect::PreprocessParams preprocess;
  std::uint64_t seed = 0;
};

struct CalibLogEntry {
  std::string frame;
  std::optional<double> mean_h;
  double delta = 0.0;
  bool fallback_used = false;
  bool updated = false;
};

// Frame-by-frame driver: segment with the active range, record samples, close the
// window when it elapses.
class Calibrator {
 public:
  explicit Calibrator(CalibConfig cfg, HsvRange initial = HsvRange::green_crop());

  CalibLogEntry observe(const std::string& frame_id, const Image& rgb, double timestamp, double deviation_deg = 0.0);

  const HsvRange& active() const { return state_.active; }
  const CalibrationState& state() const { return state_; }

 private:
  CalibConfig cfg_;
  CalibrationState state_;
  std::mt19937_64 rng_;
  std::optional<double> window_start_;
};

}  // namespace rowpilot::hsvadapt
