#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rowpilot/errors.hpp"
#include "rowpilot/geometry.hpp"
#include "rowpilot/image.hpp"
#include "rowpilot/imgcore.hpp"

// Target-point localization between croplines: the contour/moment detector, three
// line-based baselines, the green-area row-end rule, and the evaluation harness.
namespace rowpilot::rowdetect {

struct PixelPoint {
  int x = 0;
  int y = 0;
  bool operator==(const PixelPoint&) const = default;
};

// Outer boundary of one 8-connected foreground component, traced clockwise from its
// first pixel in raster order.
struct Contour {
  std::vector<PixelPoint> points;
  int component_id = 0;
};

struct MomentSet {
  std::int64_t m00 = 0;
  std::int64_t m10 = 0;
  std::int64_t m01 = 0;
  bool operator==(const MomentSet&) const = default;
};

enum class TargetKind { Contour, Vanishing };

struct TargetPoint {
  double x = 0.0;
  double y = 0.0;
  TargetKind kind = TargetKind::Contour;

  Point2d point() const { return {x, y}; }
};

// Per-pixel component labels (0 = background, components numbered from 1 in raster
// order of their first pixel) plus per-component moments.
struct ComponentMap {
  int width = 0;
  int height = 0;
  std::vector<std::int32_t> labels;
  std::vector<MomentSet> moments;  // index = label - 1
  std::vector<PixelPoint> first_pixel;
};

ComponentMap label_components(const Mask& mask);

// One contour per 8-connected component, ordered by first pixel (top row, then left).
std::vector<Contour> find_contours(const Mask& mask);

// Moments of the component that `component` traces. Throws std::invalid_argument when
// the contour is empty or does not lie on foreground.
MomentSet region_moments(const Mask& mask, const Contour& component);

// (M10/M00, M01/M00). Throws std::invalid_argument for zero area.
Point2d centroid(const MomentSet& m);

struct ContourTargetParams {
  // Components smaller than this fraction of the mask area are ignored.
  double min_area_fraction = 0.005;
};

struct ContourTargetResult {
  TargetPoint target;
  Point2d left_centroid;
  Point2d right_centroid;
  MomentSet left;
  MomentSet right;
};

// Midpoint C of the centroids C1 (left) and C2 (right) of the two dominant
// components. Throws DetectionError{NoSecondCropline} if fewer than two qualify.
ContourTargetResult contour_target_detail(const Mask& mask, const ContourTargetParams& params = {});
TargetPoint contour_target(const Mask& mask, const ContourTargetParams& params = {});

std::size_t green_area(const Mask& mask);

// Row-end threshold at the 360x240 working resolution, stored as a fraction of the frame.
inline constexpr double kRowEndAreaFraction = 2300.0 / 86400.0;
inline constexpr int kRowEndWindow = 3;

inline double row_end_threshold(std::size_t frame_pixels, double fraction = kRowEndAreaFraction) {
  return fraction * static_cast<double>(frame_pixels);
}

// Mean of the most recent `window` areas (fewer if the history is shorter).
double smoothed_area(std::span<const double> history, int window = kRowEndWindow);

// True iff the smoothed current area is below `threshold`. Throws on empty history.
bool row_end(std::span<const double> history, double threshold, int window = kRowEndWindow);

struct Segment {
  Point2d a;
  Point2d b;

  double length() const { return (b - a).norm(); }
  double slope() const;  // dy/dx, +/-inf for vertical
  Point2d midpoint() const { return (a + b) / 2.0; }
};

enum class Side { Left, Right };

struct SideSegment {
  Segment segment;
  Side side;
};

struct SlopeFilterParams {
  double min_abs_slope = 0.2;
  double max_abs_slope = 5.0;
};

// Keeps segments whose |slope| lies in [min, max] and whose sign matches the half of
// the image their midpoint falls in: negative on the left of `center_x`, positive on
// the right (y grows downward).
std::vector<SideSegment> slope_filter(std::span<const Segment> segments, double center_x,
                                      const SlopeFilterParams& params = {});

struct VanishingParams {
  SlopeFilterParams slope;
  // Accepted vanishing points lie within this many frame widths/heights of the frame.
  double horizontal_margin = 0.5;
  double vertical_margin = 1.0;
};

struct PhtParams {
  double rho = 1.0;
  double theta_deg = 1.0;
  int threshold = 30;
  int min_length = 20;
  int max_gap = 10;
};

// Progressive probabilistic Hough transform; edge pixels are visited in an order
// drawn from `rng`.
std::vector<Segment> probabilistic_hough(const Mask& edges, const PhtParams& params, std::mt19937_64& rng);

TargetPoint pht_vanishing(const Mask& edges, std::uint64_t seed, const PhtParams& params = {},
                          const VanishingParams& vp = {});

struct LsdParams {
  double angle_tolerance_deg = 22.5;
  double min_length = 15.0;
  double min_gradient = 10.0;
  int smooth_ksize = 5;
};

// Gradient-orientation region growing; each region becomes one segment along its
// principal axis.
std::vector<Segment> lsd_segments(const Image& gray, const LsdParams& params = {});

TargetPoint lsd_vanishing(const Image& gray, const LsdParams& params = {}, const VanishingParams& vp = {});

struct FpeParams {
  double harris_k = 0.04;
  double quality = 0.01;  // relative to the strongest response
  int nms_radius = 2;
  int max_corners = 300;
  int ransac_iterations = 200;
  double inlier_band = 2.0;
  int min_inliers = 6;
};

struct Corner {
  int x = 0;
  int y = 0;
  double response = 0.0;
};

std::vector<Corner> harris_corners(const Image& gray, const FpeParams& params = {});

TargetPoint fpe_vanishing(const Image& gray, std::uint64_t seed, const FpeParams& params = {},
                          const VanishingParams& vp = {});

// Shared preprocessing: blur, HSV filter, open/close, edges, region of interest.
struct PreprocessParams {
  int blur_ksize = imgcore::kDefaultBlurKsize;
  std::optional<double> blur_sigma;
  HsvRange green = HsvRange::green_crop();
  int morph_ksize = imgcore::kDefaultMorphKsize;
  int canny_low = imgcore::kDefaultCannyLow;
  int canny_high = imgcore::kDefaultCannyHigh;
  double roi_keep_fraction = imgcore::kDefaultRoiKeepFraction;
};

struct Preprocessed {
  Image hsv;          // blurred frame in HSV
  Mask crop_mask;     // after opening and closing, full frame
  Rect roi;
  Mask roi_mask;      // crop_mask inside the ROI
  Mask roi_edges;     // Canny of roi_mask
};

Preprocessed preprocess(const Image& rgb, const PreprocessParams& params = {});

enum class Detector { Contour, Pht, Lsd, Fpe };

std::string to_string(Detector d);
std::optional<Detector> parse_detector(const std::string& name);
inline constexpr Detector kAllDetectors[] = {Detector::Contour, Detector::Pht, Detector::Lsd, Detector::Fpe};

struct DetectorParams {
  ContourTargetParams contour;
  PhtParams pht;
  LsdParams lsd;
  FpeParams fpe;
  VanishingParams vanishing;
};

// Runs one detector on a preprocessed frame; coordinates are in the full frame.
// Returns nullopt when the detector reports no target.
std::optional<TargetPoint> detect(Detector d, const Preprocessed& pre, std::uint64_t seed,
                                  const DetectorParams& params = {});

struct GroundTruthLabel {
  std::string frame_id;
  std::optional<Point2d> vp;
  // Contour target by construction; contour detections are scored against it when present.
  std::optional<Point2d> target;

  std::optional<Point2d> reference_for(Detector d) const {
    if (d == Detector::Contour && target) return target;
    return vp;
  }
};

struct MetricsReport {
  int tp = 0, fp = 0, fn = 0, tn = 0;
  std::optional<double> accuracy, precision, recall, f_score;
  // TP / (TP + FP + FN): accuracy without true negatives.
  std::optional<double> strict_accuracy;

  int total() const { return tp + fp + fn + tn; }
};

inline constexpr double kTargetRadiusPx = 5.0;

MetricsReport metrics_from_counts(int tp, int fp, int fn, int tn);

// `detections[i]` pairs with `references[i]`. Throws std::invalid_argument on a size mismatch.
MetricsReport evaluate(std::span<const std::optional<Point2d>> detections,
                       std::span<const std::optional<Point2d>> references, double radius = kTargetRadiusPx);

// Label-aware overload: frame ids must match pairwise.
MetricsReport evaluate(Detector d, std::span<const std::string> frame_ids,
                       std::span<const std::optional<Point2d>> detections, std::span<const GroundTruthLabel> labels,
                       double radius = kTargetRadiusPx);

struct BenchFrame {
  std::string id;
  Image rgb;
  GroundTruthLabel label;
};

struct TimingReport {
  Detector detector;
  std::vector<std::string> frames;
  std::vector<double> micros;

  double median() const;
  double mean() const;
};

struct DetectorRun {
  Detector detector;
  std::vector<std::optional<TargetPoint>> detections;
  MetricsReport metrics;
  TimingReport timing;
};

struct BenchmarkResult {
  std::vector<DetectorRun> runs;
};

struct BenchmarkOptions {
  PreprocessParams preprocess;
  DetectorParams detectors;
  std::uint64_t seed = 0;
  double radius = kTargetRadiusPx;
  int jobs = 1;
};

// Preprocesses each frame once and times each detector stage per frame.
BenchmarkResult benchmark(std::span<const BenchFrame> corpus, std::span<const Detector> detectors,
                          const BenchmarkOptions& options = {});

// Per-frame detector seed.
std::uint64_t frame_seed(std::uint64_t run_seed, std::size_t frame_index);

}  // namespace rowpilot::rowdetect
