#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "rowpilot/rowdetect.hpp"
#include "oracles.hpp"

using namespace rowpilot;
using namespace rowpilot::rowdetect;

namespace {

void fill_rect(Mask& m, int x0, int y0, int w, int h) {
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) m.set(x, y);
}

void fill_disk(Mask& m, double cx, double cy, double r) {
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.set(x, y);
}

// Draws a thick line segment into a mask.
void draw_line(Mask& m, Point2d a, Point2d b, double half_width = 0.6) {
  const Point2d d = b - a;
  const double len2 = d.squaredNorm();
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      const Point2d p(x, y);
      const double t = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
      if ((a + t * d - p).norm() <= half_width) m.set(x, y);
    }
}

// Lines from the bottom corners toward `vp`, drawn on the part below `y_top`.
Mask two_line_fixture(Point2d vp, int w, int h, double y_top) {
  Mask m(w, h);
  for (Point2d base : {Point2d(40, h - 1), Point2d(w - 41, h - 1)}) {
    const double t = (y_top - base.y()) / (vp.y() - base.y());
    draw_line(m, base, base + t * (vp - base));
  }
  return m;
}

// Connected 8-neighbour chain check (closing step included).
bool is_closed_chain(const std::vector<PixelPoint>& pts) {
  if (pts.size() == 1) return true;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& a = pts[i];
    const auto& b = pts[(i + 1) % pts.size()];
    if (std::max(std::abs(a.x - b.x), std::abs(a.y - b.y)) != 1) return false;
  }
  return true;
}

using oracle::brute_moments;

}  // namespace

TEST(Contours, EmptyMask) { EXPECT_TRUE(find_contours(Mask(10, 10)).empty()); }

TEST(Contours, SquarePerimeter) {
  Mask m(20, 20);
  fill_rect(m, 3, 4, 10, 10);
  const auto cs = find_contours(m);
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_EQ(cs[0].points.size(), 36u);
  EXPECT_TRUE(is_closed_chain(cs[0].points));
  std::set<std::pair<int, int>> uniq;
  for (auto p : cs[0].points) {
    uniq.insert({p.x, p.y});
    EXPECT_TRUE(p.x == 3 || p.x == 12 || p.y == 4 || p.y == 13);
  }
  EXPECT_EQ(uniq.size(), 36u);
}

TEST(Contours, OrderTopLeftFirst) {
  Mask m(40, 20);
  fill_rect(m, 25, 2, 5, 5);
  fill_rect(m, 2, 8, 5, 5);
  const auto cs = find_contours(m);
  ASSERT_EQ(cs.size(), 2u);
  EXPECT_EQ(cs[0].points.front(), (PixelPoint{25, 2}));
  EXPECT_EQ(cs[1].points.front(), (PixelPoint{2, 8}));
}

TEST(Contours, DiskChainIsClosedAndOnBoundary) {
  Mask m(50, 50);
  fill_disk(m, 24.3, 25.1, 15.2);
  const auto cs = find_contours(m);
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_TRUE(is_closed_chain(cs[0].points));
  for (auto p : cs[0].points) {
    bool touches_bg = false;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        if (!m.contains(p.x + dx, p.y + dy) || !m.test(p.x + dx, p.y + dy)) touches_bg = true;
    EXPECT_TRUE(touches_bg);
  }
}

TEST(Moments, SquareAndPixel) {
  Mask m(20, 20);
  fill_rect(m, 0, 0, 10, 10);
  const auto cs = find_contours(m);
  const MomentSet s = region_moments(m, cs[0]);
  EXPECT_EQ(s, (MomentSet{100, 450, 450}));
  EXPECT_EQ(centroid(s), Point2d(4.5, 4.5));

  Mask p(10, 10);
  p.set(3, 7);
  const MomentSet ps = region_moments(p, find_contours(p)[0]);
  EXPECT_EQ(ps, (MomentSet{1, 3, 7}));
  EXPECT_EQ(centroid(ps), Point2d(3, 7));
}

TEST(Moments, Errors) {
  EXPECT_THROW(region_moments(Mask(5, 5), Contour{}), std::invalid_argument);
  EXPECT_THROW(centroid(MomentSet{}), std::invalid_argument);
}

TEST(Moments, TranslationShiftsCentroid) {
  Mask a(40, 40), b(40, 40);
  fill_disk(a, 10, 12, 5);
  fill_disk(b, 17, 9, 5);  // same shape shifted by (7,-3)
  const Point2d ca = centroid(brute_moments(a)), cb = centroid(brute_moments(b));
  EXPECT_NEAR(cb.x() - ca.x(), 7.0, 1e-12);
  EXPECT_NEAR(cb.y() - ca.y(), -3.0, 1e-12);
}

TEST(Moments, MatchBruteForceOnRandomMasks) {
  std::mt19937 rng(21);
  std::bernoulli_distribution on(0.45);
  for (int i = 0; i < 200; ++i) {
    Mask m(23, 17);
    for (int y = 0; y < 17; ++y)
      for (int x = 0; x < 23; ++x) m.set(x, y, on(rng));
    MomentSet total;
    for (const auto& c : find_contours(m)) {
      const MomentSet s = region_moments(m, c);
      total.m00 += s.m00, total.m10 += s.m10, total.m01 += s.m01;
    }
    ASSERT_EQ(total, brute_moments(m));
    ASSERT_EQ(static_cast<std::size_t>(total.m00), green_area(m));
  }
}

TEST(ContourTarget, SymmetricBlobs) {
  Mask m(360, 144);
  fill_rect(m, 80, 40, 41, 80);
  fill_rect(m, 240, 40, 41, 80);
  const auto t = contour_target(m);
  EXPECT_DOUBLE_EQ(t.x, 180.0);
  EXPECT_EQ(t.kind, TargetKind::Contour);
}

TEST(ContourTarget, SingleBlobThrows) {
  Mask m(100, 100);
  fill_rect(m, 10, 10, 30, 30);
  try {
    contour_target(m);
    FAIL();
  } catch (const DetectionError& e) {
    EXPECT_EQ(e.kind(), DetectionError::Kind::NoSecondCropline);
  }
}

TEST(ContourTarget, SpecksBelowFloorIgnored) {
  Mask m(200, 100);
  fill_rect(m, 10, 10, 40, 60);
  fill_rect(m, 150, 10, 40, 60);
  fill_rect(m, 100, 5, 5, 5);  // 25 px < 0.5% of 20000
  EXPECT_DOUBLE_EQ(contour_target(m).x, (29.5 + 169.5) / 2);
}

TEST(ContourTarget, SameSideLargestPairsWithOpposite) {
  Mask m(300, 100);
  fill_rect(m, 10, 10, 50, 80);   // largest, left
  fill_rect(m, 70, 10, 40, 80);   // second largest, also left
  fill_rect(m, 200, 10, 30, 80);  // smaller, right
  const auto d = contour_target_detail(m);
  EXPECT_DOUBLE_EQ(d.left_centroid.x(), 34.5);
  EXPECT_DOUBLE_EQ(d.right_centroid.x(), 214.5);
}

TEST(ContourTarget, MirrorInvariance) {
  std::mt19937 rng(33);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 30; ++i) {
    Mask m(160, 90), mirrored(160, 90);
    for (int k = 0; k < 2; ++k) fill_disk(m, 20 + 50 * k + 50 * u(rng), 20 + 50 * u(rng), 8 + 10 * u(rng));
    for (int y = 0; y < 90; ++y)
      for (int x = 0; x < 160; ++x) mirrored.set(159 - x, y, m.test(x, y));
    try {
      const auto a = contour_target(m);
      const auto b = contour_target(mirrored);
      EXPECT_NEAR(b.x, 159 - a.x, 1e-9);
      EXPECT_NEAR(b.y, a.y, 1e-9);
    } catch (const DetectionError&) {
      EXPECT_THROW(contour_target(mirrored), DetectionError);
    }
  }
}

TEST(GreenArea, EmptyAndFull) {
  EXPECT_EQ(green_area(Mask(360, 240)), 0u);
  EXPECT_EQ(green_area(Mask(360, 240, true)), 86400u);
}

TEST(RowEnd, Examples) {
  const double t = row_end_threshold(86400);
  EXPECT_NEAR(t, 2300.0, 1e-9);
  const std::vector<double> seq{5000, 3000, 2200};
  EXPECT_TRUE(row_end(seq, t, 1));   // raw rule
  EXPECT_FALSE(row_end(seq, t, 3));  // smoothed mean 3400 has not yet dropped
  const std::vector<double> flat(5, 5000.0);
  EXPECT_FALSE(row_end(flat, t));
  const std::vector<double> zero{0.0};
  EXPECT_TRUE(row_end(zero, t));
  EXPECT_THROW(row_end(std::vector<double>{}, t), std::invalid_argument);
}

TEST(RowEnd, MonotoneInCurrentArea) {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(0, 6000);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> h{u(rng), u(rng), u(rng)};
    if (!row_end(h, 2300)) continue;
    const double a = h.back();
    for (double lower : {a * 0.5, a * 0.9, 0.0}) {
      h.back() = lower;
      ASSERT_TRUE(row_end(h, 2300));
    }
  }
}

TEST(SlopeFilter, Rules) {
  const std::vector<Segment> segs{
      {{10, 50}, {60, 50}},   // horizontal
      {{20, 0}, {21, 10}},    // slope 10
      {{10, 60}, {40, 30}},   // slope -1, left half
      {{300, 30}, {330, 60}}, // slope +1, right half
      {{300, 60}, {330, 30}}, // slope -1, right half: wrong sign
  };
  const auto kept = slope_filter(segs, 179.5);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].side, Side::Left);
  EXPECT_EQ(kept[1].side, Side::Right);
}

TEST(Pht, TwoLinesWithSaltNoise) {
  const Point2d vp(180, 60);
  Mask m = two_line_fixture(vp, 360, 240, 70);
  std::mt19937 rng(5);
  std::bernoulli_distribution salt(0.01);
  for (int y = 0; y < 240; ++y)
    for (int x = 0; x < 360; ++x)
      if (salt(rng)) m.set(x, y);
  const auto t = pht_vanishing(m, 42);
  EXPECT_LE((t.point() - vp).norm(), 5.0) << t.x << "," << t.y;
  EXPECT_EQ(t.kind, TargetKind::Vanishing);
}

TEST(Pht, SingleLineAndSameSideThrow) {
  Mask one(360, 240);
  draw_line(one, {40, 239}, {160, 80});
  EXPECT_THROW(pht_vanishing(one, 1), DetectionError);
  Mask same(360, 240);
  draw_line(same, {20, 239}, {140, 80});
  draw_line(same, {60, 239}, {180, 80});
  EXPECT_THROW(pht_vanishing(same, 1), DetectionError);
}

TEST(Pht, DeterministicPerSeed) {
  Mask m = two_line_fixture({170, 50}, 360, 240, 60);
  std::mt19937_64 a(9), b(9);
  const auto sa = probabilistic_hough(m, {}, a);
  const auto sb = probabilistic_hough(m, {}, b);
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(sa[i].a, sb[i].a);
}

TEST(Lsd, TwoLineFixture) {
  const Point2d vp(180, 60);
  const Mask m = two_line_fixture(vp, 360, 240, 70);
  const auto t = lsd_vanishing(m.to_image());
  EXPECT_LE((t.point() - vp).norm(), 8.0) << t.x << "," << t.y;
}

TEST(Lsd, BlankThrows) { EXPECT_THROW(lsd_vanishing(Image(100, 80, 1, 0)), DetectionError); }

TEST(Fpe, DottedLines) {
  const Point2d vp(180, 60);
  Image img(360, 240, 1, 0);
  for (Point2d base : {Point2d(40, 239), Point2d(319, 239)}) {
    for (int k = 0; k < 14; ++k) {
      const Point2d c = base + (k / 16.0) * (vp - base);
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) img.at(static_cast<int>(std::lround(c.x())) + dx, static_cast<int>(std::lround(c.y())) + dy) = 255;
    }
  }
  const auto t = fpe_vanishing(img, 3);
  EXPECT_LE((t.point() - vp).norm(), 8.0) << t.x << "," << t.y;
  EXPECT_EQ(fpe_vanishing(img, 3).x, t.x);
}

TEST(Fpe, FeaturelessThrows) { EXPECT_THROW(fpe_vanishing(Image(100, 80, 1, 50), 1), DetectionError); }

TEST(Evaluate, RadiusRule) {
  const std::vector<std::optional<Point2d>> det{Point2d(4.9, 0), Point2d(5.1, 0), std::nullopt, std::nullopt};
  const std::vector<std::optional<Point2d>> ref{Point2d(0, 0), Point2d(0, 0), Point2d(0, 0), std::nullopt};
  const auto r = evaluate(det, ref);
  EXPECT_EQ(r.tp, 1);
  EXPECT_EQ(r.fp, 1);
  EXPECT_EQ(r.fn, 1);
  EXPECT_EQ(r.tn, 1);
  EXPECT_EQ(r.total(), 4);
}

TEST(Evaluate, TenFrameFScoreByHand) {
  // 5 TP, 2 FP, 2 FN, 1 TN: p = 5/7, r = 5/7, f = 5/7.
  std::vector<std::optional<Point2d>> det, ref;
  for (int i = 0; i < 5; ++i) det.push_back(Point2d(1, 1)), ref.push_back(Point2d(1, 2));
  for (int i = 0; i < 2; ++i) det.push_back(Point2d(50, 1)), ref.push_back(Point2d(1, 2));
  for (int i = 0; i < 2; ++i) det.push_back(std::nullopt), ref.push_back(Point2d(1, 2));
  det.push_back(std::nullopt), ref.push_back(std::nullopt);
  const auto r = evaluate(det, ref);
  EXPECT_EQ(r.total(), 10);
  EXPECT_NEAR(*r.accuracy, 0.6, 1e-12);
  EXPECT_NEAR(*r.precision, 5.0 / 7, 1e-12);
  EXPECT_NEAR(*r.recall, 5.0 / 7, 1e-12);
  EXPECT_NEAR(*r.f_score, 5.0 / 7, 1e-12);
  EXPECT_NEAR(*r.strict_accuracy, 5.0 / 9, 1e-12);
}

TEST(Evaluate, UndefinedRatiosStayUndefined) {
  const std::vector<std::optional<Point2d>> none{std::nullopt};
  const auto r = evaluate(none, none);
  EXPECT_EQ(r.tn, 1);
  EXPECT_FALSE(r.precision.has_value());
  EXPECT_FALSE(r.recall.has_value());
  EXPECT_FALSE(r.f_score.has_value());
  EXPECT_DOUBLE_EQ(*r.accuracy, 1.0);
}

TEST(Evaluate, MismatchedFramesRejected) {
  const std::vector<std::optional<Point2d>> one{std::nullopt};
  const std::vector<std::optional<Point2d>> two{std::nullopt, std::nullopt};
  EXPECT_THROW(evaluate(one, two), std::invalid_argument);
  const std::vector<std::string> ids{"a.ppm"};
  const std::vector<GroundTruthLabel> labels{{"b.ppm", std::nullopt, std::nullopt}};
  EXPECT_THROW(evaluate(Detector::Pht, ids, one, labels), std::invalid_argument);
}

TEST(Benchmark, EmptyDetectorSet) {
  std::vector<BenchFrame> corpus{{"f", Image(36, 24, 3, 0), {"f", std::nullopt, std::nullopt}}};
  EXPECT_TRUE(benchmark(corpus, {}).runs.empty());
}

TEST(Benchmark, CountsAndPositiveTimings) {
  std::vector<BenchFrame> corpus;
  for (int i = 0; i < 3; ++i) corpus.push_back({"f" + std::to_string(i), Image(72, 48, 3, 10), {"f" + std::to_string(i), {}, {}}});
  const auto res = benchmark(corpus, kAllDetectors);
  ASSERT_EQ(res.runs.size(), 4u);
  for (const auto& run : res.runs) {
    EXPECT_EQ(run.metrics.total(), 3);
    EXPECT_EQ(run.metrics.tn, 3);
    ASSERT_EQ(run.timing.micros.size(), 3u);
    for (double us : run.timing.micros) EXPECT_GT(us, 0.0);
  }
}
