#include "rowpilot/rowdetect.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace rowpilot::rowdetect {

namespace {

constexpr int kDx8[8] = {-1, -1, 0, 1, 1, 1, 0, -1};  // W, NW, N, NE, E, SE, S, SW
constexpr int kDy8[8] = {0, -1, -1, -1, 0, 1, 1, 1};

int direction_of(int dx, int dy) {
  for (int d = 0; d < 8; ++d)
    if (kDx8[d] == dx && kDy8[d] == dy) return d;
  return -1;
}

// Moore-neighbour tracing with the Jacob stopping rule. `start` must be the first
// pixel of its component in raster order, so its west neighbour is background.
std::vector<PixelPoint> trace_boundary(const Mask& mask, PixelPoint start) {
  auto fg = [&](int x, int y) { return mask.contains(x, y) && mask.test(x, y); };
  std::vector<PixelPoint> chain{start};
  PixelPoint p = start;
  int back = 0;  // direction from p to the backtrack pixel
  std::optional<PixelPoint> second;
  const std::size_t cap = 4 * mask.pixel_count() + 8;
  while (chain.size() < cap) {
    int found = -1;
    for (int i = 1; i <= 8; ++i) {
      const int d = (back + i) % 8;
      if (fg(p.x + kDx8[d], p.y + kDy8[d])) {
        found = d;
        break;
      }
    }
    if (found < 0) break;  // isolated pixel
    const PixelPoint next{p.x + kDx8[found], p.y + kDy8[found]};
    // New backtrack: the neighbour examined just before `next`, seen from `next`.
    const int prev_dir = (found + 7) % 8;
    const PixelPoint b{p.x + kDx8[prev_dir], p.y + kDy8[prev_dir]};
    if (p == start && second && next == *second) break;
    if (!second) second = next;
    back = direction_of(b.x - next.x, b.y - next.y);
    p = next;
    if (p == start) {
      // Re-entering start; the loop stops when the next step repeats the first move.
      continue;
    }
    chain.push_back(p);
  }
  return chain;
}

void check_window(int window) {
  if (window < 1) throw std::invalid_argument("row_end window must be >= 1");
}

bool inside_extended(const Point2d& p, int w, int h, const VanishingParams& vp) {
  return std::isfinite(p.x()) && std::isfinite(p.y()) && p.x() >= -vp.horizontal_margin * w &&
         p.x() <= (1.0 + vp.horizontal_margin) * w && p.y() >= -vp.vertical_margin * h && p.y() <= h;
}

[[noreturn]] void no_vp(const std::string& why) {
  throw DetectionError(DetectionError::Kind::NoVanishingPoint, why);
}

TargetPoint intersect_sides(const geometry::Line<double>& left, const geometry::Line<double>& right, int w, int h,
                            const VanishingParams& vp) {
  const auto p = geometry::intersect(left, right);
  if (!p) no_vp("side lines are parallel");
  if (!inside_extended(*p, w, h, vp)) no_vp("intersection outside the extended image plane");
  return {p->x(), p->y(), TargetKind::Vanishing};
}

}  // namespace

ComponentMap label_components(const Mask& mask) {
  ComponentMap out;
  out.width = mask.width();
  out.height = mask.height();
  out.labels.assign(mask.pixel_count(), 0);
  const int w = mask.width(), h = mask.height();
  std::vector<int> stack;
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* row = mask.row(y);
    for (int x = 0; x < w; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * w + x;
      if (!row[x] || out.labels[idx]) continue;
      const std::int32_t label = static_cast<std::int32_t>(out.moments.size()) + 1;
      MomentSet m;
      out.labels[idx] = label;
      stack.assign(1, static_cast<int>(idx));
      while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        const int cx = cur % w, cy = cur / w;
        m.m00 += 1;
        m.m10 += cx;
        m.m01 += cy;
        for (int d = 0; d < 8; ++d) {
          const int nx = cx + kDx8[d], ny = cy + kDy8[d];
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
          if (mask.data()[nidx] && !out.labels[nidx]) {
            out.labels[nidx] = label;
            stack.push_back(static_cast<int>(nidx));
          }
        }
      }
      out.moments.push_back(m);
      out.first_pixel.push_back({x, y});
    }
  }
  return out;
}

std::vector<Contour> find_contours(const Mask& mask) {
  const ComponentMap map = label_components(mask);
  std::vector<Contour> out;
  out.reserve(map.first_pixel.size());
  for (std::size_t i = 0; i < map.first_pixel.size(); ++i)
    out.push_back({trace_boundary(mask, map.first_pixel[i]), static_cast<int>(i) + 1});
  return out;
}

MomentSet region_moments(const Mask& mask, const Contour& component) {
  if (component.points.empty()) throw std::invalid_argument("region_moments: empty contour");
  const PixelPoint seed = component.points.front();
  if (!mask.contains(seed.x, seed.y) || !mask.test(seed.x, seed.y))
    throw std::invalid_argument("region_moments: contour does not belong to the mask");
  const int w = mask.width(), h = mask.height();
  std::vector<std::uint8_t> seen(mask.pixel_count(), 0);
  std::vector<PixelPoint> stack{seed};
  seen[static_cast<std::size_t>(seed.y) * w + seed.x] = 1;
  MomentSet m;
  while (!stack.empty()) {
    const PixelPoint p = stack.back();
    stack.pop_back();
    m.m00 += 1;
    m.m10 += p.x;
    m.m01 += p.y;
    for (int d = 0; d < 8; ++d) {
      const int nx = p.x + kDx8[d], ny = p.y + kDy8[d];
      if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
      const std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
      if (!seen[nidx] && mask.test(nx, ny)) {
        seen[nidx] = 1;
        stack.push_back({nx, ny});
      }
    }
  }
  return m;
}

Point2d centroid(const MomentSet& m) {
  if (m.m00 <= 0) throw std::invalid_argument("centroid of an empty region");
  return {static_cast<double>(m.m10) / m.m00, static_cast<double>(m.m01) / m.m00};
}

ContourTargetResult contour_target_detail(const Mask& mask, const ContourTargetParams& params) {
  const ComponentMap map = label_components(mask);
  const double floor = params.min_area_fraction * static_cast<double>(mask.pixel_count());
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < map.moments.size(); ++i)
    if (static_cast<double>(map.moments[i].m00) >= floor) order.push_back(i);
  if (order.size() < 2)
    throw DetectionError(DetectionError::Kind::NoSecondCropline, "fewer than two cropline components");
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return map.moments[a].m00 > map.moments[b].m00; });

  const double mid = (mask.width() - 1) / 2.0;
  const auto side_of = [&](std::size_t i) { return centroid(map.moments[i]).x() < mid; };
  std::size_t first = order[0], second = order[1];
  if (side_of(first) == side_of(second)) {
    for (std::size_t k = 2; k < order.size(); ++k) {
      if (side_of(order[k]) != side_of(first)) {
        second = order[k];
        break;
      }
    }
  }
  Point2d a = centroid(map.moments[first]), b = centroid(map.moments[second]);
  MomentSet ma = map.moments[first], mb = map.moments[second];
  if (b.x() < a.x()) {
    std::swap(a, b);
    std::swap(ma, mb);
  }
  const Point2d c = (a + b) / 2.0;
  return {{c.x(), c.y(), TargetKind::Contour}, a, b, ma, mb};
}

TargetPoint contour_target(const Mask& mask, const ContourTargetParams& params) {
  return contour_target_detail(mask, params).target;
}

std::size_t green_area(const Mask& mask) { return mask.count(); }

double smoothed_area(std::span<const double> history, int window) {
  check_window(window);
  if (history.empty()) throw std::invalid_argument("row_end: empty area history");
  const std::size_t n = std::min<std::size_t>(history.size(), static_cast<std::size_t>(window));
  double sum = 0.0;
  for (std::size_t i = history.size() - n; i < history.size(); ++i) sum += history[i];
  return sum / static_cast<double>(n);
}

bool row_end(std::span<const double> history, double threshold, int window) {
  return smoothed_area(history, window) < threshold;
}

double Segment::slope() const {
  const double dx = b.x() - a.x(), dy = b.y() - a.y();
  if (dx == 0.0) return dy >= 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  return dy / dx;
}

std::vector<SideSegment> slope_filter(std::span<const Segment> segments, double center_x,
                                      const SlopeFilterParams& params) {
  std::vector<SideSegment> out;
  for (const auto& s : segments) {
    const double k = s.slope();
    const double ak = std::abs(k);
    if (!(ak >= params.min_abs_slope && ak <= params.max_abs_slope)) continue;
    const Side side = s.midpoint().x() < center_x ? Side::Left : Side::Right;
    if ((side == Side::Left) != (k < 0)) continue;
    out.push_back({s, side});
  }
  return out;
}

std::vector<Segment> probabilistic_hough(const Mask& edges, const PhtParams& params, std::mt19937_64& rng) {
  if (params.rho <= 0 || params.theta_deg <= 0) throw std::invalid_argument("PHT resolution must be positive");
  const int w = edges.width(), h = edges.height();
  const double theta = params.theta_deg * std::numbers::pi / 180.0;
  const int numangle = std::max(1, static_cast<int>(std::lround(std::numbers::pi / theta)));
  const int numrho = static_cast<int>(std::lround(((w + h) * 2 + 1) / params.rho));
  const int rho_offset = (numrho - 1) / 2;
  std::vector<float> tcos(numangle), tsin(numangle);
  for (int n = 0; n < numangle; ++n) {
    tcos[n] = static_cast<float>(std::cos(n * theta) / params.rho);
    tsin[n] = static_cast<float>(std::sin(n * theta) / params.rho);
  }
  std::vector<int> acc(static_cast<std::size_t>(numangle) * numrho, 0);
  std::vector<std::uint8_t> live(edges.pixel_count(), 0), voted(edges.pixel_count(), 0);
  std::vector<PixelPoint> pts;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (edges.test(x, y)) {
        pts.push_back({x, y});
        live[static_cast<std::size_t>(y) * w + x] = 1;
      }

  auto rbin = [&](int x, int y, int n) { return static_cast<int>(std::lround(x * tcos[n] + y * tsin[n])) + rho_offset; };
  auto unvote = [&](int x, int y) {
    for (int n = 0; n < numangle; ++n) --acc[static_cast<std::size_t>(n) * numrho + rbin(x, y, n)];
  };

  constexpr int kShift = 16;
  std::vector<Segment> lines;
  for (std::size_t count = pts.size(); count > 0; --count) {
    const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, count - 1)(rng);
    const PixelPoint pt = pts[pick];
    pts[pick] = pts[count - 1];
    const std::size_t pidx = static_cast<std::size_t>(pt.y) * w + pt.x;
    if (!live[pidx]) continue;

    int max_val = params.threshold - 1, max_n = 0;
    for (int n = 0; n < numangle; ++n) {
      int& a = acc[static_cast<std::size_t>(n) * numrho + rbin(pt.x, pt.y, n)];
      ++a;
      if (a > max_val) {
        max_val = a;
        max_n = n;
      }
    }
    voted[pidx] = 1;
    if (max_val < params.threshold) continue;

    // Walk along the detected line in both directions from the point.
    const double a = -tsin[max_n] * params.rho, b = tcos[max_n] * params.rho;
    std::int64_t x0 = pt.x, y0 = pt.y, dx0, dy0;
    const bool xflag = std::abs(a) > std::abs(b);
    if (xflag) {
      dx0 = a > 0 ? 1 : -1;
      dy0 = std::llround(b * (1 << kShift) / std::abs(a));
      y0 = (y0 << kShift) + (1 << (kShift - 1));
    } else {
      dy0 = b > 0 ? 1 : -1;
      dx0 = std::llround(a * (1 << kShift) / std::abs(b));
      x0 = (x0 << kShift) + (1 << (kShift - 1));
    }
    PixelPoint ends[2] = {pt, pt};
    for (int k = 0; k < 2; ++k) {
      int gap = 0;
      std::int64_t x = x0, y = y0;
      const std::int64_t dx = k ? -dx0 : dx0, dy = k ? -dy0 : dy0;
      for (;; x += dx, y += dy) {
        const int j1 = static_cast<int>(xflag ? x : x >> kShift);
        const int i1 = static_cast<int>(xflag ? y >> kShift : y);
        if (j1 < 0 || j1 >= w || i1 < 0 || i1 >= h) break;
        if (live[static_cast<std::size_t>(i1) * w + j1]) {
          gap = 0;
          ends[k] = {j1, i1};
        } else if (++gap > params.max_gap) {
          break;
        }
      }
    }
    const bool good = std::abs(ends[1].x - ends[0].x) >= params.min_length ||
                      std::abs(ends[1].y - ends[0].y) >= params.min_length;
    for (int k = 0; k < 2; ++k) {
      std::int64_t x = x0, y = y0;
      const std::int64_t dx = k ? -dx0 : dx0, dy = k ? -dy0 : dy0;
      for (;; x += dx, y += dy) {
        const int j1 = static_cast<int>(xflag ? x : x >> kShift);
        const int i1 = static_cast<int>(xflag ? y >> kShift : y);
        const std::size_t idx = static_cast<std::size_t>(i1) * w + j1;
        if (live[idx]) {
          if (good && voted[idx]) unvote(j1, i1);
          live[idx] = 0;
        }
        if (i1 == ends[k].y && j1 == ends[k].x) break;
      }
    }
    if (good)
      lines.push_back({Point2d(ends[0].x, ends[0].y), Point2d(ends[1].x, ends[1].y)});
  }
  return lines;
}

TargetPoint pht_vanishing(const Mask& edges, std::uint64_t seed, const PhtParams& params, const VanishingParams& vp) {
  std::mt19937_64 rng(seed);
  const auto segments = probabilistic_hough(edges, params, rng);
  const auto kept = slope_filter(segments, (edges.width() - 1) / 2.0, vp.slope);
  const SideSegment* best[2] = {nullptr, nullptr};
  for (const auto& s : kept) {
    const int i = s.side == Side::Left ? 0 : 1;
    if (!best[i] || s.segment.length() > best[i]->segment.length()) best[i] = &s;
  }
  if (!best[0] || !best[1]) no_vp("no line on one side");
  using L = geometry::Line<double>;
  return intersect_sides(L::through(best[0]->segment.a, best[0]->segment.b),
                         L::through(best[1]->segment.a, best[1]->segment.b), edges.width(), edges.height(), vp);
}

std::vector<Segment> lsd_segments(const Image& gray_in, const LsdParams& params) {
  // Light smoothing first; raw staircase edges fragment the orientation field.
  const Image gray = imgcore::gaussian_blur(imgcore::to_gray(gray_in), params.smooth_ksize);
  const int w = gray.width(), h = gray.height();
  const auto g = imgcore::sobel(gray);
  const std::size_t n = gray.pixel_count();
  std::vector<float> mag(n), ang(n);
  std::vector<int> cand;
  for (std::size_t i = 0; i < n; ++i) {
    mag[i] = std::hypot(g.gx[i], g.gy[i]);
    ang[i] = std::atan2(g.gx[i], -g.gy[i]);  // level-line orientation
    if (mag[i] > params.min_gradient) cand.push_back(static_cast<int>(i));
  }
  std::stable_sort(cand.begin(), cand.end(), [&](int a, int b) { return mag[a] > mag[b]; });

  const double tol = params.angle_tolerance_deg * std::numbers::pi / 180.0;
  auto angle_diff = [](double a, double b) {
    double d = std::fmod(std::abs(a - b), 2.0 * std::numbers::pi);
    return d > std::numbers::pi ? 2.0 * std::numbers::pi - d : d;
  };
  std::vector<std::uint8_t> used(n, 0);
  std::vector<Segment> out;
  std::vector<int> region;
  for (int seed : cand) {
    if (used[seed]) continue;
    used[seed] = 1;
    region.assign(1, seed);
    double sx = std::cos(ang[seed]), sy = std::sin(ang[seed]);
    double region_angle = ang[seed];
    for (std::size_t k = 0; k < region.size(); ++k) {
      const int px = region[k] % w, py = region[k] / w;
      for (int d = 0; d < 8; ++d) {
        const int nx = px + kDx8[d], ny = py + kDy8[d];
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
        const int ni = ny * w + nx;
        if (used[ni] || mag[ni] <= params.min_gradient) continue;
        if (angle_diff(ang[ni], region_angle) > tol) continue;
        used[ni] = 1;
        region.push_back(ni);
        sx += std::cos(ang[ni]);
        sy += std::sin(ang[ni]);
        region_angle = std::atan2(sy, sx);
      }
    }
    if (region.size() < 5) continue;

    double wsum = 0;
    Point2d mean = Point2d::Zero();
    for (int i : region) {
      mean += mag[i] * Point2d(i % w, i / w);
      wsum += mag[i];
    }
    mean /= wsum;
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (int i : region) {
      const Point2d d = Point2d(i % w, i / w) - mean;
      cov += mag[i] * d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
    const Point2d axis = eig.eigenvectors().col(1).normalized();
    double tmin = 0, tmax = 0;
    for (int i : region) {
      const double t = (Point2d(i % w, i / w) - mean).dot(axis);
      tmin = std::min(tmin, t);
      tmax = std::max(tmax, t);
    }
    if (tmax - tmin < params.min_length) continue;
    out.push_back({mean + tmin * axis, mean + tmax * axis});
  }
  return out;
}

TargetPoint lsd_vanishing(const Image& gray, const LsdParams& params, const VanishingParams& vp) {
  const auto segments = lsd_segments(gray, params);
  const auto kept = slope_filter(segments, (gray.width() - 1) / 2.0, vp.slope);
  std::vector<Point2d> pts[2];
  std::vector<double> wts[2];
  for (const auto& s : kept) {
    const int i = s.side == Side::Left ? 0 : 1;
    const double len = s.segment.length();
    pts[i].push_back(s.segment.a);
    pts[i].push_back(s.segment.b);
    wts[i].push_back(len);
    wts[i].push_back(len);
  }
  std::optional<geometry::Line<double>> lines[2];
  for (int i = 0; i < 2; ++i)
    lines[i] = geometry::fit_line<double>(std::span<const Point2d>(pts[i]), std::span<const double>(wts[i]));
  if (!lines[0] || !lines[1]) no_vp("no segment on one side");
  return intersect_sides(*lines[0], *lines[1], gray.width(), gray.height(), vp);
}

std::vector<Corner> harris_corners(const Image& gray_in, const FpeParams& params) {
  const Image gray = imgcore::to_gray(gray_in);
  const int w = gray.width(), h = gray.height();
  const auto g = imgcore::sobel(gray);
  const std::size_t n = gray.pixel_count();
  // Structure tensor summed over a 5x5 window via integral images.
  std::vector<double> ixx((w + 1) * static_cast<std::size_t>(h + 1), 0.0), iyy(ixx), ixy(ixx);
  auto I = [&](int x, int y) { return static_cast<std::size_t>(y) * (w + 1) + x; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double gx = g.gx[i] / 255.0, gy = g.gy[i] / 255.0;
      ixx[I(x + 1, y + 1)] = gx * gx + ixx[I(x, y + 1)] + ixx[I(x + 1, y)] - ixx[I(x, y)];
      iyy[I(x + 1, y + 1)] = gy * gy + iyy[I(x, y + 1)] + iyy[I(x + 1, y)] - iyy[I(x, y)];
      ixy[I(x + 1, y + 1)] = gx * gy + ixy[I(x, y + 1)] + ixy[I(x + 1, y)] - ixy[I(x, y)];
    }
  auto box = [&](const std::vector<double>& s, int x, int y) {
    const int x0 = std::max(0, x - 2), y0 = std::max(0, y - 2);
    const int x1 = std::min(w, x + 3), y1 = std::min(h, y + 3);
    return s[I(x1, y1)] - s[I(x0, y1)] - s[I(x1, y0)] + s[I(x0, y0)];
  };
  std::vector<double> resp(n);
  double rmax = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double a = box(ixx, x, y), b = box(iyy, x, y), c = box(ixy, x, y);
      const double r = a * b - c * c - params.harris_k * (a + b) * (a + b);
      resp[static_cast<std::size_t>(y) * w + x] = r;
      rmax = std::max(rmax, r);
    }
  std::vector<Corner> out;
  if (rmax <= 0) return out;
  const double thresh = params.quality * rmax;
  const int r = params.nms_radius;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = resp[static_cast<std::size_t>(y) * w + x];
      if (v <= thresh) continue;
      bool peak = true;
      for (int dy = -r; dy <= r && peak; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if ((dx == 0 && dy == 0) || nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const double o = resp[static_cast<std::size_t>(ny) * w + nx];
          // Plateaus keep their first pixel in raster order.
          if (o > v || (o == v && (dy < 0 || (dy == 0 && dx < 0)))) {
            peak = false;
            break;
          }
        }
      if (peak) out.push_back({x, y, v});
    }
  std::stable_sort(out.begin(), out.end(), [](const Corner& a, const Corner& b) { return a.response > b.response; });
  if (static_cast<int>(out.size()) > params.max_corners) out.resize(params.max_corners);
  return out;
}

TargetPoint fpe_vanishing(const Image& gray, std::uint64_t seed, const FpeParams& params, const VanishingParams& vp) {
  const auto corners = harris_corners(gray, params);
  const double cx = (gray.width() - 1) / 2.0;
  std::vector<Point2d> side_pts[2];
  for (const auto& c : corners) side_pts[c.x < cx ? 0 : 1].emplace_back(c.x, c.y);

  std::mt19937_64 rng(seed);
  std::optional<geometry::Line<double>> lines[2];
  for (int s = 0; s < 2; ++s) {
    const auto& pts = side_pts[s];
    if (pts.size() < 2) no_vp("too few corners on one side");
    std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
    std::size_t best_count = 0;
    std::vector<std::size_t> best_inliers;
    for (int it = 0; it < params.ransac_iterations; ++it) {
      const std::size_t i = pick(rng);
      std::size_t j = pick(rng);
      if (i == j || pts[i] == pts[j]) continue;
      const auto line = geometry::Line<double>::through(pts[i], pts[j]);
      const double k = line.slope();
      if (!(std::abs(k) >= vp.slope.min_abs_slope && std::abs(k) <= vp.slope.max_abs_slope)) continue;
      if ((s == 0) != (k < 0)) continue;
      std::vector<std::size_t> inliers;
      for (std::size_t q = 0; q < pts.size(); ++q)
        if (line.distance(pts[q]) <= params.inlier_band) inliers.push_back(q);
      if (inliers.size() > best_count) {
        best_count = inliers.size();
        best_inliers = std::move(inliers);
      }
    }
    if (static_cast<int>(best_count) < params.min_inliers) no_vp("insufficient RANSAC inliers");
    std::vector<Point2d> in;
    for (auto q : best_inliers) in.push_back(pts[q]);
    lines[s] = geometry::fit_line<double>(std::span<const Point2d>(in));
    if (!lines[s]) no_vp("degenerate inlier set");
  }
  return intersect_sides(*lines[0], *lines[1], gray.width(), gray.height(), vp);
}

Preprocessed preprocess(const Image& rgb, const PreprocessParams& p) {
  Preprocessed out;
  out.hsv = imgcore::rgb_to_hsv(imgcore::gaussian_blur(rgb, p.blur_ksize, p.blur_sigma));
  Mask m = imgcore::in_range(out.hsv, p.green);
  m = imgcore::morphology(m, imgcore::MorphOp::Open, p.morph_ksize);
  m = imgcore::morphology(m, imgcore::MorphOp::Close, p.morph_ksize);
  out.crop_mask = std::move(m);
  out.roi = imgcore::bottom_roi(rgb.width(), rgb.height(), p.roi_keep_fraction);
  out.roi_mask = imgcore::roi_crop(out.crop_mask, out.roi);
  out.roi_edges = imgcore::canny(out.roi_mask.to_image(), p.canny_low, p.canny_high);
  return out;
}

std::string to_string(Detector d) {
  switch (d) {
    case Detector::Contour: return "contour";
    case Detector::Pht: return "pht";
    case Detector::Lsd: return "lsd";
    case Detector::Fpe: return "fpe";
  }
  return "?";
}

std::optional<Detector> parse_detector(const std::string& name) {
  for (Detector d : kAllDetectors)
    if (to_string(d) == name) return d;
  return std::nullopt;
}

std::optional<TargetPoint> detect(Detector d, const Preprocessed& pre, std::uint64_t seed,
                                  const DetectorParams& params) {
  try {
    TargetPoint t;
    switch (d) {
      case Detector::Contour: t = contour_target(pre.roi_mask, params.contour); break;
      case Detector::Pht: t = pht_vanishing(pre.roi_edges, seed, params.pht, params.vanishing); break;
      case Detector::Lsd: t = lsd_vanishing(pre.roi_mask.to_image(), params.lsd, params.vanishing); break;
      case Detector::Fpe: t = fpe_vanishing(pre.roi_mask.to_image(), seed, params.fpe, params.vanishing); break;
    }
    t.x += pre.roi.x;
    t.y += pre.roi.y;
    return t;
  } catch (const DetectionError&) {
    return std::nullopt;
  }
}

MetricsReport metrics_from_counts(int tp, int fp, int fn, int tn) {
  MetricsReport r;
  r.tp = tp, r.fp = fp, r.fn = fn, r.tn = tn;
  auto ratio = [](int num, int den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / den;
  };
  r.accuracy = ratio(tp + tn, tp + tn + fp + fn);
  r.precision = ratio(tp, tp + fp);
  r.recall = ratio(tp, tp + fn);
  r.strict_accuracy = ratio(tp, tp + fp + fn);
  if (r.precision && r.recall && (*r.precision + *r.recall) > 0)
    r.f_score = 2.0 * *r.precision * *r.recall / (*r.precision + *r.recall);
  return r;
}

MetricsReport evaluate(std::span<const std::optional<Point2d>> detections,
                       std::span<const std::optional<Point2d>> references, double radius) {
  if (detections.size() != references.size())
    throw std::invalid_argument("evaluate: detection and label counts differ");
  int tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const auto& d = detections[i];
    const auto& r = references[i];
    if (d) {
      if (r && (*d - *r).norm() <= radius)
        ++tp;
      else
        ++fp;
    } else {
      r ? ++fn : ++tn;
    }
  }
  return metrics_from_counts(tp, fp, fn, tn);
}

MetricsReport evaluate(Detector d, std::span<const std::string> frame_ids,
                       std::span<const std::optional<Point2d>> detections, std::span<const GroundTruthLabel> labels,
                       double radius) {
  if (frame_ids.size() != labels.size()) throw std::invalid_argument("evaluate: frame sets differ in size");
  std::vector<std::optional<Point2d>> refs;
  refs.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (frame_ids[i] != labels[i].frame_id)
      throw std::invalid_argument("evaluate: frame '" + frame_ids[i] + "' does not match label '" +
                                  labels[i].frame_id + "'");
    refs.push_back(labels[i].reference_for(d));
  }
  return evaluate(detections, refs, radius);
}

double TimingReport::median() const {
  if (micros.empty()) return 0.0;
  std::vector<double> v = micros;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : (v[m - 1] + v[m]) / 2.0;
}

double TimingReport::mean() const {
  if (micros.empty()) return 0.0;
  return std::accumulate(micros.begin(), micros.end(), 0.0) / static_cast<double>(micros.size());
}

std::uint64_t frame_seed(std::uint64_t run_seed, std::size_t frame_index) {
  return run_seed ^ static_cast<std::uint64_t>(frame_index);
}

BenchmarkResult benchmark(std::span<const BenchFrame> corpus, std::span<const Detector> detectors,
                          const BenchmarkOptions& options) {
  BenchmarkResult result;
  if (detectors.empty()) return result;
  const std::size_t n = corpus.size();
  for (Detector d : detectors) {
    DetectorRun run{d, std::vector<std::optional<TargetPoint>>(n), {}, {d, {}, std::vector<double>(n, 0.0)}};
    for (const auto& f : corpus) run.timing.frames.push_back(f.id);
    result.runs.push_back(std::move(run));
  }

  auto work = [&](std::size_t i) {
    const Preprocessed pre = preprocess(corpus[i].rgb, options.preprocess);
    const std::uint64_t seed = frame_seed(options.seed, i);
    for (auto& run : result.runs) {
      const auto t0 = std::chrono::steady_clock::now();
      run.detections[i] = detect(run.detector, pre, seed, options.detectors);
      const auto t1 = std::chrono::steady_clock::now();
      const double us = std::chrono::duration<double, std::micro>(t1 - t0).count();
      run.timing.micros[i] = std::max(us, 1e-3);
    }
  };
  const int jobs = std::max(1, std::min<int>(options.jobs, static_cast<int>(n)));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (int j = 0; j < jobs; ++j)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) work(i);
      });
  }

  std::vector<std::string> ids;
  std::vector<GroundTruthLabel> labels;
  for (const auto& f : corpus) {
    ids.push_back(f.id);
    labels.push_back(f.label);
  }
  for (auto& run : result.runs) {
    std::vector<std::optional<Point2d>> pts;
    for (const auto& t : run.detections) pts.push_back(t ? std::optional<Point2d>(t->point()) : std::nullopt);
    run.metrics = evaluate(run.detector, ids, pts, labels, options.radius);
  }
  return result;
}

}  // namespace rowpilot::rowdetect
