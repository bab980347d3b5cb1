#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>

#include "rowpilot/image.hpp"

// Pixel-level primitives shared by every detector. All functions are pure.
namespace rowpilot::imgcore {

struct Hsv {
  int h = 0;  // half-degrees, [0,179]
  int s = 0;
  int v = 0;
};

struct Rgb {
  int r = 0;
  int g = 0;
  int b = 0;
};

// Unquantized HSV: hue in degrees [0,360), s and v in [0,1].
struct HsvF {
  double h = 0.0;
  double s = 0.0;
  double v = 0.0;
};

HsvF rgb_to_hsv_exact(Rgb rgb);
Rgb hsv_to_rgb_exact(HsvF hsv);
Hsv rgb_to_hsv(Rgb rgb);
Rgb hsv_to_rgb(Hsv hsv);

// 3-channel RGB -> 3-channel HSV (H in half-degrees). Rejects single-channel input.
Image rgb_to_hsv(const Image& rgb);
Image hsv_to_rgb(const Image& hsv);
// Luma (BT.601 weights) of an RGB image; a 1-channel input is returned unchanged.
Image to_gray(const Image& img);
Image extract_channel(const Image& img, int channel);

inline constexpr int kDefaultBlurKsize = 25;

// Sigma used when none is supplied.
inline double default_sigma(int ksize) { return 0.3 * ((ksize - 1) * 0.5 - 1.0) + 0.8; }

// Normalized 1-D Gaussian taps of length ksize.
std::vector<double> gaussian_kernel(int ksize, double sigma);

// Separable Gaussian blur with replicated borders. Rejects even ksize.
Image gaussian_blur(const Image& img, int ksize = kDefaultBlurKsize,
                    std::optional<double> sigma = std::nullopt);

// 255 where the HSV pixel lies in any band of `range`.
Mask in_range(const Image& hsv, const HsvRange& range);

enum class MorphOp { Erode, Dilate, Open, Close };

// How pixels outside the frame are treated. Replicate matches the border rule used
// everywhere else; Background treats them as 0, which is the set-theoretic definition.
enum class BorderMode { Replicate, Background };

inline constexpr int kDefaultMorphKsize = 21;

// Square structuring element of side ksize (odd). Open = erode then dilate;
// close = dilate then erode.
Mask morphology(const Mask& mask, MorphOp op, int ksize = kDefaultMorphKsize,
                BorderMode border = BorderMode::Replicate);

inline constexpr int kDefaultCannyLow = 50;
inline constexpr int kDefaultCannyHigh = 150;

struct Gradient {
  std::vector<float> gx;
  std::vector<float> gy;
  int width = 0;
  int height = 0;
};

// 3x3 Sobel on a single-channel image, scaled by 1/4 so a 0->255 step reads 255.
Gradient sobel(const Image& gray);

// Thresholds use the unnormalized 3x3 Sobel scale (4x the `sobel` magnitudes).
Mask canny(const Image& gray, int low = kDefaultCannyLow, int high = kDefaultCannyHigh);

struct ClaheParams {
  double clip_limit = 2.0;
  int tiles_x = 8;
  int tiles_y = 8;
};

// Contrast-limited adaptive histogram equalization applied to each channel.
Image clahe(const Image& img, const ClaheParams& params = {});

// Bilinear resampling with pixel-center alignment; identity for unchanged size.
Image resize(const Image& img, int width, int height);

// Resampling kernel behind `resize`, parameterized by how a source sample is fetched.
// `fetch(x, y, c)` is only ever called with 0 <= x < src_w and 0 <= y < src_h.
template <typename Fetch>
Image resize_with(int src_w, int src_h, int channels, Fetch&& fetch, int width, int height) {
  Image out(width, height, channels);
  const double sx = static_cast<double>(src_w) / width;
  const double sy = static_cast<double>(src_h) / height;
  for (int y = 0; y < height; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src_h - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, src_h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src_w - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, src_w - 1);
      const double wx = fx - x0;
      for (int c = 0; c < channels; ++c) {
        const double top = fetch(x0, y0, c) * (1.0 - wx) + fetch(x1, y0, c) * wx;
        const double bottom = fetch(x0, y1, c) * (1.0 - wx) + fetch(x1, y1, c) * wx;
        const double v = top * (1.0 - wy) + bottom * wy;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

inline constexpr int kDefaultBinarizeThreshold = 180;

// 255 iff value > t.
Mask binarize(const Image& gray, int t = kDefaultBinarizeThreshold);
// 255 iff lo <= value <= hi (the keep-band reading of a threshold interval).
Mask binarize_band(const Image& gray, int lo, int hi);

// Exact copy of the window. Throws std::out_of_range if `r` is not inside `img`.
Image roi_crop(const Image& img, const Rect& r);
Mask roi_crop(const Mask& mask, const Rect& r);

// Bottom fraction of the frame kept for row navigation.
inline constexpr double kDefaultRoiKeepFraction = 0.6;
Rect bottom_roi(int width, int height, double keep_fraction = kDefaultRoiKeepFraction);

}  // namespace rowpilot::imgcore
