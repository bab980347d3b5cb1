#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace rowpilot {

using Point2d = Eigen::Vector2d;

// Row-major 8-bit raster with interleaved channels.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, std::uint8_t fill = 0);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }

  std::uint8_t& at(int x, int y, int c = 0) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  std::uint8_t* row(int y) {
    return data_.data() + static_cast<std::size_t>(y) * width_ * channels_;
  }
  const std::uint8_t* row(int y) const {
    return data_.data() + static_cast<std::size_t>(y) * width_ * channels_;
  }

  std::span<std::uint8_t> data() { return data_; }
  std::span<const std::uint8_t> data() const { return data_; }

  bool operator==(const Image& other) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> data_;
};

// Binary raster. Every sample is 0 or 255.
class Mask {
 public:
  Mask() = default;
  Mask(int width, int height, bool fill = false);
  // Takes ownership of `data`; throws std::invalid_argument on a size mismatch or a
  // sample outside {0,255}.
  Mask(int width, int height, std::vector<std::uint8_t> data);

  // Throws std::invalid_argument unless `img` is single-channel with values in {0,255}.
  static Mask from_image(const Image& img);
  Image to_image() const;

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }

  bool test(int x, int y) const {
    return data_[static_cast<std::size_t>(y) * width_ + x] != 0;
  }
  void set(int x, int y, bool on = true) {
    data_[static_cast<std::size_t>(y) * width_ + x] = on ? 255 : 0;
  }
  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  std::span<const std::uint8_t> data() const { return data_; }
  const std::uint8_t* row(int y) const {
    return data_.data() + static_cast<std::size_t>(y) * width_;
  }

  std::size_t count() const;
  Mask complement() const;

  bool operator==(const Mask& other) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

struct Rect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  bool inside(int w, int h) const {
    return x >= 0 && y >= 0 && width >= 1 && height >= 1 && x + width <= w &&
           y + height <= h;
  }
  bool operator==(const Rect&) const = default;
};

// One HSV box. Hue in half-degrees [0,179], saturation and value in [0,255].
struct HsvBand {
  std::array<int, 3> low{0, 0, 0};
  std::array<int, 3> high{179, 255, 255};

  bool contains(int h, int s, int v) const {
    return h >= low[0] && h <= high[0] && s >= low[1] && s <= high[1] && v >= low[2] &&
           v <= high[2];
  }
  bool valid() const;
  bool operator==(const HsvBand&) const = default;
};

// Union of HSV boxes; a union of two hue intervals expresses red wraparound.
class HsvRange {
 public:
  HsvRange() = default;
  explicit HsvRange(std::vector<HsvBand> bands);

  const std::vector<HsvBand>& bands() const { return bands_; }
  bool contains(int h, int s, int v) const {
    for (const auto& b : bands_)
      if (b.contains(h, s, v)) return true;
    return false;
  }
  bool operator==(const HsvRange&) const = default;

  // Green crop thresholds used at initial calibration.
  static HsvRange green_crop();
  // Red dot pattern as seen facing the sun.
  static HsvRange red_sun();
  // Red dot pattern under backlighting.
  static HsvRange red_backlight();
  // Red threshold used during the docking field trials (hue wraps at 180).
  static HsvRange red_trial();
  static HsvRange blue_header();

 private:
  std::vector<HsvBand> bands_;
};

// Netpbm I/O. P6 for 3-channel, P5 for 1-channel; maxval 255 only.
Image read_pnm(const std::string& path);
void write_pnm(const std::string& path, const Image& img);
Image decode_pnm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pnm(const Image& img);

}  // namespace rowpilot
