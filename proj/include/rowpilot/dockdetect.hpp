#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rowpilot/geometry.hpp"
#include "rowpilot/image.hpp"
#include "rowpilot/imgcore.hpp"

// Charging-station detection: circles found by their geometric definition, confirmed
// by red pixels around them, with a circle Hough transform as the fallback.
namespace rowpilot::dockdetect {

struct CircleCandidate {
  Point2d center = Point2d::Zero();
  double radius = 0.0;
  double ofs = 0.0;  // variance of boundary-to-center distances, px^2
  double votes = 0.0;
};

using geometry::distance_variance;
using geometry::min_enclosing_circle;

// Red pixels within `factor * radius` of the candidate center, clipped to the frame.
std::size_t red_area_near(const Image& hsv, const CircleCandidate& c, const HsvRange& red, double factor = 2.0);

struct HoughParams {
  int r_min = 8;
  int r_max = 60;
  // Fraction of a perfect perimeter's votes needed to report a circle.
  double vote_fraction = 0.6;
  int canny_low = imgcore::kDefaultCannyLow;
  int canny_high = imgcore::kDefaultCannyHigh;
};

// Gradient-directed circle Hough transform, strongest first; near-duplicate centers
// (closer than half the radius) keep the stronger circle.
std::vector<CircleCandidate> hough_circles(const Image& gray, const HoughParams& params = {});

struct DefCircleParams {
  std::size_t min_pts = 20;
  double max_ofs = 100.0;
  double min_r = 10.0;
  double max_r = 100000.0;
  HsvRange red = HsvRange::red_sun();
  double red_area_floor = 0.3;       // fraction of the candidate disk area
  double neighborhood_factor = 2.0;  // red search radius / candidate radius
  int binarize_t = imgcore::kDefaultBinarizeThreshold;
  bool binarize_band = false;
  int band_lo = 160;
  int band_hi = 200;
  int work_width = 360;
  int work_height = 240;
  imgcore::ClaheParams clahe;
  int binarize_channel = 0;  // RGB channel thresholded after CLAHE; -1 = luma
  bool hough_fallback = true;
  HoughParams hough;
  bool blue_filter = false;
  HsvRange blue = HsvRange::blue_header();
  double blue_radius_factor = 6.0;
  std::size_t blue_min_pixels = 20;
};

enum class Source { DefCircle, Hough, None };
std::string to_string(Source s);

struct DockResult {
  std::vector<CircleCandidate> accepted;
  std::optional<Point2d> target;  // absent means drive straight
  Source source = Source::None;

  bool drive_straight() const { return !target.has_value(); }
};

// Mean of the circle centers. Throws std::invalid_argument when empty.
Point2d dock_target(std::span<const CircleCandidate> circles);

// Order-independent merge: candidates sorted by (ofs, x, y, r), then any candidate
// closer than half the larger radius to a kept one is dropped.
std::vector<CircleCandidate> dedup_by_ofs(std::vector<CircleCandidate> circles);

// Contour stage of the detector on a binary image: every contour longer than
// min_pts whose enclosing circle passes the ofs and radius gates.
std::vector<CircleCandidate> definition_circles(const Mask& binary, const DefCircleParams& params);

DockResult def_circle(const Image& rgb, const DefCircleParams& params = {});

// Frame scoring: a target counts when it lies inside the labelled middle dot.
inline bool target_on_dot(const std::optional<Point2d>& target, Point2d dot_center, double dot_radius) {
  return target && (*target - dot_center).norm() <= dot_radius;
}

// Baseline: Hough on the plain gray frame, centroid of the three strongest circles.
DockResult hough_only(const Image& rgb, const HoughParams& params = {}, std::size_t top_k = 3);

}  // namespace rowpilot::dockdetect
