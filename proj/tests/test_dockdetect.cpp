#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "rowpilot/dockdetect.hpp"
#include "oracles.hpp"

using namespace rowpilot;
using namespace rowpilot::dockdetect;
using geometry::Circle;

namespace {

using oracle::mec_brute;

void paint_disk(Image& img, Point2d c, double r, std::array<std::uint8_t, 3> rgb) {
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if ((x - c.x()) * (x - c.x()) + (y - c.y()) * (y - c.y()) <= r * r)
        for (int k = 0; k < 3; ++k) img.at(x, y, k) = rgb[k];
}

constexpr std::array<std::uint8_t, 3> kDotRgb{230, 120, 170};

Image three_dot_frame() {
  Image img(360, 240, 3);
  for (int y = 0; y < 240; ++y)
    for (int x = 0; x < 360; ++x) img.at(x, y, 0) = 60, img.at(x, y, 1) = 62, img.at(x, y, 2) = 58;
  for (int y = 60; y < 180; ++y)
    for (int x = 60; x < 300; ++x) img.at(x, y, 0) = 35, img.at(x, y, 1) = 35, img.at(x, y, 2) = 40;
  for (double cx : {120.0, 180.0, 240.0}) paint_disk(img, {cx, 110}, 16, kDotRgb);
  return img;
}

}  // namespace

TEST(MinEnclosingCircle, TwoPoints) {
  const std::vector<Point2d> p{{0, 0}, {4, 0}};
  const auto c = min_enclosing_circle(p);
  EXPECT_NEAR(c.center.x(), 2, 1e-12);
  EXPECT_NEAR(c.radius, 2, 1e-12);
}

TEST(MinEnclosingCircle, EquilateralTriangle) {
  const std::vector<Point2d> p{{0, 0}, {2, 0}, {1, std::sqrt(3.0)}};
  EXPECT_NEAR(min_enclosing_circle(p).radius, 2 / std::sqrt(3.0), 1e-12);
}

TEST(MinEnclosingCircle, EmptyRejected) {
  EXPECT_THROW(min_enclosing_circle(std::vector<Point2d>{}), std::invalid_argument);
}

TEST(MinEnclosingCircle, MatchesBruteForce) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-50, 50);
  std::uniform_int_distribution<int> n(1, 12);
  for (int i = 0; i < 200; ++i) {
    std::vector<Point2d> p(n(rng));
    for (auto& q : p) q = Point2d(u(rng), u(rng));
    const auto c = min_enclosing_circle(p);
    const auto b = mec_brute(p);
    ASSERT_NEAR(c.radius, b.radius, 1e-9 * std::max(1.0, b.radius)) << "set " << i;
    for (const auto& q : p) ASSERT_LE((q - c.center).norm(), c.radius + 1e-9);
    // At most three points define it: enough of them lie on the boundary.
    int on = 0;
    for (const auto& q : p) on += std::abs((q - c.center).norm() - c.radius) < 1e-7;
    ASSERT_GE(on, std::min<int>(2, static_cast<int>(p.size())));
  }
}

TEST(DistanceVariance, Cases) {
  std::vector<Point2d> ring;
  for (int k = 0; k < 12; ++k) ring.emplace_back(5 * std::cos(k * 0.5), 5 * std::sin(k * 0.5));
  EXPECT_NEAR(distance_variance(ring, Point2d(0, 0)), 0.0, 1e-9);
  const std::vector<Point2d> sq{{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  EXPECT_NEAR(distance_variance(sq, Point2d(0.5, 0.5)), 0.0, 1e-12);
  std::vector<Point2d> sq8 = sq;
  for (Point2d m : {Point2d(0.5, 0), Point2d(0, 0.5), Point2d(1, 0.5), Point2d(0.5, 1)}) sq8.push_back(m);
  const double a = std::sqrt(2.0) / 2, b = 0.5, c = (a + b) / 2;
  const double expected = ((a - c) * (a - c) * 4 + (b - c) * (b - c) * 4) / 8;
  EXPECT_NEAR(distance_variance(sq8, Point2d(0.5, 0.5)), expected, 1e-12);
}

TEST(RedArea, SolidRedDisk) {
  Image rgb(100, 100, 3, 90);
  paint_disk(rgb, {50, 50}, 12, kDotRgb);
  const Image hsv = imgcore::rgb_to_hsv(rgb);
  const CircleCandidate c{{50, 50}, 12, 0};
  EXPECT_GE(static_cast<double>(red_area_near(hsv, c, HsvRange::red_sun())), std::numbers::pi * 144 * 0.9);
  const Image gray_hsv = imgcore::rgb_to_hsv(Image(100, 100, 3, 128));
  EXPECT_EQ(red_area_near(gray_hsv, c, HsvRange::red_sun()), 0u);
}

TEST(HoughCircles, SingleRenderedCircle) {
  Image img(160, 120, 1, 20);
  for (int y = 0; y < 120; ++y)
    for (int x = 0; x < 160; ++x)
      if ((x - 70.0) * (x - 70.0) + (y - 55.0) * (y - 55.0) <= 400) img.at(x, y) = 220;
  const auto cs = hough_circles(img);
  ASSERT_FALSE(cs.empty());
  EXPECT_LE((cs[0].center - Point2d(70, 55)).norm(), 2.0);
  EXPECT_LE(std::abs(cs[0].radius - 20), 2.0);
  EXPECT_GE(cs[0].ofs, 0.0);
}

TEST(HoughCircles, BlankImage) { EXPECT_TRUE(hough_circles(Image(80, 60, 1, 100)).empty()); }

TEST(DockTarget, Mean) {
  const std::vector<CircleCandidate> cs{{{10, 0}, 1, 0}, {{20, 0}, 1, 0}, {{30, 0}, 1, 0}};
  EXPECT_EQ(dock_target(cs), Point2d(20, 0));
  EXPECT_EQ(dock_target(std::span(cs).first(1)), Point2d(10, 0));
  EXPECT_THROW(dock_target(std::vector<CircleCandidate>{}), std::invalid_argument);
}

TEST(DefCircle, ThreeDots) {
  const auto res = def_circle(three_dot_frame());
  ASSERT_EQ(res.accepted.size(), 3u);
  EXPECT_EQ(res.source, Source::DefCircle);
  ASSERT_TRUE(res.target);
  EXPECT_LE((*res.target - Point2d(180, 110)).norm(), 2.0);
  const DefCircleParams p;
  for (const auto& c : res.accepted) {
    EXPECT_LT(c.ofs, p.max_ofs);
    EXPECT_GT(c.radius, p.min_r);
    EXPECT_LE(c.radius, p.max_r);
  }
}

TEST(DefCircle, NoRedMeansDriveStraight) {
  Image img(360, 240, 3, 70);
  paint_disk(img, {180, 120}, 20, {240, 240, 240});
  const auto res = def_circle(img);
  EXPECT_TRUE(res.drive_straight());
  EXPECT_TRUE(res.accepted.empty());
}

TEST(DefCircle, Deterministic) {
  const Image f = three_dot_frame();
  const auto a = def_circle(f), b = def_circle(f);
  ASSERT_EQ(a.accepted.size(), b.accepted.size());
  for (std::size_t i = 0; i < a.accepted.size(); ++i) EXPECT_EQ(a.accepted[i].center, b.accepted[i].center);
}

TEST(Dedup, OrderIndependent) {
  std::mt19937_64 rng(3);
  std::vector<CircleCandidate> cs{{{10, 10}, 10, 5}, {{13, 10}, 10, 3}, {{50, 50}, 8, 1}, {{52, 51}, 8, 1}};
  const auto ref = dedup_by_ofs(cs);
  for (int i = 0; i < 20; ++i) {
    std::shuffle(cs.begin(), cs.end(), rng);
    const auto got = dedup_by_ofs(cs);
    ASSERT_EQ(got.size(), ref.size());
    for (std::size_t k = 0; k < got.size(); ++k) ASSERT_EQ(got[k].center, ref[k].center);
  }
  EXPECT_EQ(ref.size(), 2u);
}
