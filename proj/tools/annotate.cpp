#include "annotate.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rowpilot::cli {

namespace {

void put(Image& img, int x, int y, Rgb8 c) {
  if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
  for (int k = 0; k < 3; ++k) img.at(x, y, k) = c[k];
}

}  // namespace

Image to_rgb(const Image& img) {
  if (img.channels() == 3) return img;
  if (img.channels() != 1) throw std::invalid_argument("expected a 1- or 3-channel image");
  Image out(img.width(), img.height(), 3);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int k = 0; k < 3; ++k) out.at(x, y, k) = img.at(x, y);
  return out;
}

void draw_cross(Image& rgb, Point2d center, Rgb8 color, int arm) {
  const int cx = static_cast<int>(std::lround(center.x())), cy = static_cast<int>(std::lround(center.y()));
  for (int d = -arm; d <= arm; ++d) {
    put(rgb, cx + d, cy, color);
    put(rgb, cx, cy + d, color);
  }
}

void draw_circle(Image& rgb, Point2d center, double radius, Rgb8 color) {
  if (!(radius > 0)) return;
  const int steps = std::max(16, static_cast<int>(std::ceil(2.0 * std::numbers::pi * radius * 2.0)));
  for (int i = 0; i < steps; ++i) {
    const double a = 2.0 * std::numbers::pi * i / steps;
    put(rgb, static_cast<int>(std::lround(center.x() + radius * std::cos(a))),
        static_cast<int>(std::lround(center.y() + radius * std::sin(a))), color);
  }
}

}  // namespace rowpilot::cli
