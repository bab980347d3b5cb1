#pragma once

#include <array>
#include <cstdint>

#include "rowpilot/image.hpp"

// Overlays for visual diffing: pure colours, 3-pixel crosses and one-pixel circles.
namespace rowpilot::cli {

using Rgb8 = std::array<std::uint8_t, 3>;

inline constexpr Rgb8 kGreen{0, 255, 0};
inline constexpr Rgb8 kRed{255, 0, 0};
inline constexpr Rgb8 kBlue{0, 0, 255};
inline constexpr Rgb8 kYellow{255, 255, 0};

// Grey frames are promoted to RGB.
Image to_rgb(const Image& img);
void draw_cross(Image& rgb, Point2d center, Rgb8 color, int arm = 3);
void draw_circle(Image& rgb, Point2d center, double radius, Rgb8 color);

}  // namespace rowpilot::cli
