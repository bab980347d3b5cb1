#include "rowpilot/dockdetect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>

#include "rowpilot/rowdetect.hpp"

namespace rowpilot::dockdetect {

namespace {

constexpr double kRingHalfWidth = 1.5;

bool red_ok(const Image& hsv, const CircleCandidate& c, const DefCircleParams& p) {
  const double floor = p.red_area_floor * std::numbers::pi * c.radius * c.radius;
  return static_cast<double>(red_area_near(hsv, c, p.red, p.neighborhood_factor)) > floor;
}

bool blue_ok(const Image& hsv, const CircleCandidate& c, const DefCircleParams& p) {
  return red_area_near(hsv, c, p.blue, p.blue_radius_factor) >= p.blue_min_pixels;
}

std::vector<CircleCandidate> validate(std::vector<CircleCandidate> in, const Image& hsv, const DefCircleParams& p) {
  std::vector<CircleCandidate> out;
  for (auto& c : in)
    if (red_ok(hsv, c, p) && (!p.blue_filter || blue_ok(hsv, c, p))) out.push_back(c);
  return dedup_by_ofs(std::move(out));
}

}  // namespace

std::string to_string(Source s) {
  switch (s) {
    case Source::DefCircle: return "defcircle";
    case Source::Hough: return "hough";
    case Source::None: return "none";
  }
  return "?";
}

std::size_t red_area_near(const Image& hsv, const CircleCandidate& c, const HsvRange& red, double factor) {
  if (hsv.channels() != 3) throw std::invalid_argument("red_area_near expects an HSV image");
  const double r = factor * c.radius;
  const int x0 = std::max(0, static_cast<int>(std::floor(c.center.x() - r)));
  const int x1 = std::min(hsv.width() - 1, static_cast<int>(std::ceil(c.center.x() + r)));
  const int y0 = std::max(0, static_cast<int>(std::floor(c.center.y() - r)));
  const int y1 = std::min(hsv.height() - 1, static_cast<int>(std::ceil(c.center.y() + r)));
  std::size_t n = 0;
  for (int y = y0; y <= y1; ++y) {
    const double dy = y - c.center.y();
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - c.center.x();
      if (dx * dx + dy * dy > r * r) continue;
      if (red.contains(hsv.at(x, y, 0), hsv.at(x, y, 1), hsv.at(x, y, 2))) ++n;
    }
  }
  return n;
}

std::vector<CircleCandidate> hough_circles(const Image& gray_in, const HoughParams& p) {
  if (p.r_min < 1 || p.r_min >= p.r_max) throw std::invalid_argument("hough_circles requires 1 <= r_min < r_max");
  const Image gray = imgcore::to_gray(gray_in);
  const int w = gray.width(), h = gray.height();
  const Mask edges = imgcore::canny(gray, p.canny_low, p.canny_high);
  const imgcore::Gradient g = imgcore::sobel(gray);
  const int nr = p.r_max - p.r_min + 1;
  const std::size_t plane = static_cast<std::size_t>(w) * h;

  std::vector<std::pair<int, int>> edge_px;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (edges.test(x, y)) edge_px.emplace_back(x, y);
  if (edge_px.empty()) return {};

  std::vector<std::uint16_t> acc(plane * nr, 0);
  for (auto [x, y] : edge_px) {
    const std::size_t i = static_cast<std::size_t>(y) * w + x;
    const double m = std::hypot(g.gx[i], g.gy[i]);
    if (m <= 0) continue;
    const double ux = g.gx[i] / m, uy = g.gy[i] / m;
    for (int ri = 0; ri < nr; ++ri) {
      const int r = p.r_min + ri;
      for (int sgn : {1, -1}) {
        const int cx = static_cast<int>(std::lround(x + sgn * r * ux));
        const int cy = static_cast<int>(std::lround(y + sgn * r * uy));
        if (cx < 0 || cy < 0 || cx >= w || cy >= h) continue;
        auto& cell = acc[ri * plane + static_cast<std::size_t>(cy) * w + cx];
        if (cell < UINT16_MAX) ++cell;
      }
    }
  }

  // Candidate stage: votes within one pixel of a center, and one step of radius,
  // count toward it. Candidates are then confirmed by counting edge pixels on the ring.
  std::vector<std::uint32_t> score(plane * nr, 0);
  std::vector<std::uint32_t> tmp(plane);
  for (int ri = 0; ri < nr; ++ri) {
    std::uint32_t* s = score.data() + ri * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      std::uint32_t v = acc[ri * plane + i];
      if (ri > 0) v += acc[(ri - 1) * plane + i];
      if (ri + 1 < nr) v += acc[(ri + 1) * plane + i];
      s[i] = v;
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        std::uint32_t v = s[y * w + x];
        if (x > 0) v += s[y * w + x - 1];
        if (x + 1 < w) v += s[y * w + x + 1];
        tmp[y * w + x] = v;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        std::uint32_t v = tmp[y * w + x];
        if (y > 0) v += tmp[(y - 1) * w + x];
        if (y + 1 < h) v += tmp[(y + 1) * w + x];
        s[y * w + x] = v;
      }
  }

  auto ring_support = [&](Point2d c, double r) {
    const int x0 = std::max(0, static_cast<int>(std::floor(c.x() - r - 2)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(c.x() + r + 2)));
    const int y0 = std::max(0, static_cast<int>(std::floor(c.y() - r - 2)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(c.y() + r + 2)));
    int n = 0;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (edges.test(x, y) && std::abs(std::hypot(x - c.x(), y - c.y()) - r) <= kRingHalfWidth) ++n;
    return n;
  };

  std::vector<CircleCandidate> found;
  for (int ri = 0; ri < nr; ++ri) {
    const int r = p.r_min + ri;
    const double thresh = p.vote_fraction * 2.0 * std::numbers::pi * r;
    const std::uint32_t* s = score.data() + ri * plane;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::uint32_t v = s[y * w + x];
        if (v < thresh) continue;
        bool peak = true;
        for (int dr = -1; dr <= 1 && peak; ++dr) {
          const int rj = ri + dr;
          if (rj < 0 || rj >= nr) continue;
          for (int dy = -1; dy <= 1 && peak; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              if (!dr && !dy && !dx) continue;
              const int nx = x + dx, ny = y + dy;
              if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
              const std::uint32_t o = score[rj * plane + static_cast<std::size_t>(ny) * w + nx];
              const bool earlier = dr < 0 || (dr == 0 && (dy < 0 || (dy == 0 && dx < 0)));
              if (o > v || (o == v && earlier)) {
                peak = false;
                break;
              }
            }
        }
        if (!peak) continue;
        const int support = ring_support(Point2d(x, y), r);
        if (support >= thresh) found.push_back({Point2d(x, y), static_cast<double>(r), 0.0, static_cast<double>(support)});
      }
  }
  std::sort(found.begin(), found.end(), [](const CircleCandidate& a, const CircleCandidate& b) {
    if (a.votes != b.votes) return a.votes > b.votes;
    if (a.radius != b.radius) return a.radius < b.radius;
    if (a.center.y() != b.center.y()) return a.center.y() < b.center.y();
    return a.center.x() < b.center.x();
  });
  std::vector<CircleCandidate> kept;
  for (const auto& c : found) {
    bool dup = false;
    for (const auto& k : kept)
      if ((k.center - c.center).norm() < std::max(k.radius, c.radius) / 2.0) {
        dup = true;
        break;
      }
    if (!dup) kept.push_back(c);
  }
  for (auto& c : kept) {
    std::vector<Point2d> support;
    for (auto [x, y] : edge_px) {
      const double d = (Point2d(x, y) - c.center).norm();
      if (std::abs(d - c.radius) <= kRingHalfWidth) support.emplace_back(x, y);
    }
    if (!support.empty()) c.ofs = distance_variance<double>(std::span<const Point2d>(support), c.center);
  }
  return kept;
}

Point2d dock_target(std::span<const CircleCandidate> circles) {
  if (circles.empty()) throw std::invalid_argument("dock_target of no circles");
  Point2d sum = Point2d::Zero();
  for (const auto& c : circles) sum += c.center;
  return sum / static_cast<double>(circles.size());
}

std::vector<CircleCandidate> dedup_by_ofs(std::vector<CircleCandidate> circles) {
  std::sort(circles.begin(), circles.end(), [](const CircleCandidate& a, const CircleCandidate& b) {
    if (a.ofs != b.ofs) return a.ofs < b.ofs;
    if (a.center.x() != b.center.x()) return a.center.x() < b.center.x();
    if (a.center.y() != b.center.y()) return a.center.y() < b.center.y();
    return a.radius < b.radius;
  });
  std::vector<CircleCandidate> kept;
  for (const auto& c : circles) {
    bool dup = false;
    for (const auto& k : kept)
      if ((k.center - c.center).norm() < std::max(k.radius, c.radius) / 2.0) {
        dup = true;
        break;
      }
    if (!dup) kept.push_back(c);
  }
  return kept;
}

std::vector<CircleCandidate> definition_circles(const Mask& binary, const DefCircleParams& p) {
  std::vector<CircleCandidate> out;
  std::vector<Point2d> pts;
  for (const auto& contour : rowdetect::find_contours(binary)) {
    if (contour.points.size() <= p.min_pts) continue;
    pts.clear();
    for (auto q : contour.points) pts.emplace_back(q.x, q.y);
    const auto circle = min_enclosing_circle<double>(std::span<const Point2d>(pts));
    const double ofs = distance_variance<double>(std::span<const Point2d>(pts), circle.center);
    if (ofs < p.max_ofs && circle.radius > p.min_r && circle.radius <= p.max_r)
      out.push_back({circle.center, circle.radius, ofs, 0.0});
  }
  return out;
}

DockResult def_circle(const Image& rgb, const DefCircleParams& p) {
  if (rgb.channels() != 3) throw std::invalid_argument("def_circle expects an RGB frame");
  const Image work = imgcore::resize(rgb, p.work_width, p.work_height);
  const double sx = static_cast<double>(rgb.width()) / p.work_width;
  const double sy = static_cast<double>(rgb.height()) / p.work_height;

  const Image eq = imgcore::clahe(work, p.clahe);
  const Image chan = p.binarize_channel < 0 ? imgcore::to_gray(eq) : imgcore::extract_channel(eq, p.binarize_channel);
  const Mask bin =
      p.binarize_band ? imgcore::binarize_band(chan, p.band_lo, p.band_hi) : imgcore::binarize(chan, p.binarize_t);
  const Image hsv = imgcore::rgb_to_hsv(work);

  DockResult res;
  res.accepted = validate(definition_circles(bin, p), hsv, p);
  if (!res.accepted.empty()) {
    res.source = Source::DefCircle;
  } else if (p.hough_fallback) {
    res.accepted = validate(hough_circles(imgcore::to_gray(eq), p.hough), hsv, p);
    if (!res.accepted.empty()) res.source = Source::Hough;
  }
  for (auto& c : res.accepted) {
    c.center = Point2d((c.center.x() + 0.5) * sx - 0.5, (c.center.y() + 0.5) * sy - 0.5);
    c.radius *= std::sqrt(sx * sy);
  }
  if (!res.accepted.empty()) res.target = dock_target(res.accepted);
  return res;
}

DockResult hough_only(const Image& rgb, const HoughParams& params, std::size_t top_k) {
  DockResult res;
  auto circles = hough_circles(imgcore::to_gray(rgb), params);
  if (circles.size() > top_k) circles.resize(top_k);
  res.accepted = std::move(circles);
  if (!res.accepted.empty()) {
    res.source = Source::Hough;
    res.target = dock_target(res.accepted);
  }
  return res;
}

}  // namespace rowpilot::dockdetect
