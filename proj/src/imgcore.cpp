#include "rowpilot/imgcore.hpp"

#include <array>
#include <deque>
#include <numeric>

namespace rowpilot::imgcore {

HsvF rgb_to_hsv_exact(Rgb rgb) {
  const double r = rgb.r / 255.0, g = rgb.g / 255.0, b = rgb.b / 255.0;
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  HsvF out;
  out.v = mx;
  out.s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) return out;
  double h;
  if (mx == r) h = 60.0 * (g - b) / d;
  else if (mx == g) h = 60.0 * (b - r) / d + 120.0;
  else h = 60.0 * (r - g) / d + 240.0;
  if (h < 0.0) h += 360.0;
  out.h = h;
  return out;
}

namespace {

void hsv_to_rgb_scaled(HsvF hsv, double* r, double* g, double* b) {
  const double c = hsv.v * hsv.s;
  double hp = std::fmod(hsv.h, 360.0);
  if (hp < 0.0) hp += 360.0;
  hp /= 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r1 = 0, g1 = 0, b1 = 0;
  switch (static_cast<int>(hp)) {
    case 0: r1 = c; g1 = x; break;
    case 1: r1 = x; g1 = c; break;
    case 2: g1 = c; b1 = x; break;
    case 3: g1 = x; b1 = c; break;
    case 4: r1 = x; b1 = c; break;
    default: r1 = c; b1 = x; break;
  }
  const double m = hsv.v - c;
  *r = (r1 + m) * 255.0;
  *g = (g1 + m) * 255.0;
  *b = (b1 + m) * 255.0;
}

int to_byte(double v) { return static_cast<int>(std::clamp(std::lround(v), 0L, 255L)); }
}  // namespace

Rgb hsv_to_rgb_exact(HsvF hsv) {
  double r, g, b;
  hsv_to_rgb_scaled(hsv, &r, &g, &b);
  return {to_byte(r), to_byte(g), to_byte(b)};
}

Hsv rgb_to_hsv(Rgb rgb) {
  const int mx = std::max({rgb.r, rgb.g, rgb.b});
  const int mn = std::min({rgb.r, rgb.g, rgb.b});
  const int d = mx - mn;
  Hsv out;
  out.v = mx;
  out.s = mx > 0 ? static_cast<int>(std::lround(255.0 * d / mx)) : 0;
  if (d == 0) return out;
  double h;
  if (mx == rgb.r) h = 60.0 * (rgb.g - rgb.b) / d;
  else if (mx == rgb.g) h = 60.0 * (rgb.b - rgb.r) / d + 120.0;
  else h = 60.0 * (rgb.r - rgb.g) / d + 240.0;
  if (h < 0.0) h += 360.0;
  out.h = static_cast<int>(std::lround(h / 2.0)) % 180;
  return out;
}

Rgb hsv_to_rgb(Hsv hsv) {
  return hsv_to_rgb_exact({hsv.h * 2.0, hsv.s / 255.0, hsv.v / 255.0});
}

namespace {

template <typename F>
Image map3(const Image& src, F&& f) {
  Image out(src.width(), src.height(), 3);
  auto in = src.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < in.size(); i += 3) {
    const auto [a, b, c] = f(in[i], in[i + 1], in[i + 2]);
    dst[i] = static_cast<std::uint8_t>(a);
    dst[i + 1] = static_cast<std::uint8_t>(b);
    dst[i + 2] = static_cast<std::uint8_t>(c);
  }
  return out;
}

}  // namespace

Image rgb_to_hsv(const Image& rgb) {
  if (rgb.channels() != 3) throw std::invalid_argument("rgb_to_hsv requires a 3-channel image");
  return map3(rgb, [](int r, int g, int b) {
    const Hsv h = rgb_to_hsv(Rgb{r, g, b});
    return std::array<int, 3>{h.h, h.s, h.v};
  });
}

Image hsv_to_rgb(const Image& hsv) {
  if (hsv.channels() != 3) throw std::invalid_argument("hsv_to_rgb requires a 3-channel image");
  return map3(hsv, [](int h, int s, int v) {
    const Rgb c = hsv_to_rgb(Hsv{h, s, v});
    return std::array<int, 3>{c.r, c.g, c.b};
  });
}

Image to_gray(const Image& img) {
  if (img.channels() == 1) return img;
  Image out(img.width(), img.height(), 1);
  auto in = img.data();
  auto dst = out.data();
  for (std::size_t i = 0, j = 0; j < dst.size(); i += 3, ++j) {
    // Fixed-point BT.601: 0.299, 0.587, 0.114 scaled by 2^14.
    dst[j] = static_cast<std::uint8_t>((in[i] * 4899 + in[i + 1] * 9617 + in[i + 2] * 1868 + 8192) >> 14);
  }
  return out;
}

Image extract_channel(const Image& img, int channel) {
  if (channel < 0 || channel >= img.channels()) throw std::out_of_range("channel index out of range");
  Image out(img.width(), img.height(), 1);
  auto in = img.data();
  auto dst = out.data();
  const int ch = img.channels();
  for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = in[j * ch + channel];
  return out;
}

std::vector<double> gaussian_kernel(int ksize, double sigma) {
  if (ksize < 1 || ksize % 2 == 0) throw std::invalid_argument("Gaussian ksize must be odd and >= 1");
  if (!(sigma > 0.0)) throw std::invalid_argument("Gaussian sigma must be positive");
  std::vector<double> k(ksize);
  const int r = ksize / 2;
  double sum = 0.0;
  for (int i = 0; i < ksize; ++i) {
    const double d = i - r;
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

Image gaussian_blur(const Image& img, int ksize, std::optional<double> sigma) {
  if (ksize < 1 || ksize % 2 == 0) throw std::invalid_argument("Gaussian ksize must be odd and >= 1");
  const double s = sigma.value_or(default_sigma(ksize));
  const auto kd = gaussian_kernel(ksize, s);
  std::vector<float> k(kd.begin(), kd.end());
  const int r = ksize / 2;
  const int w = img.width(), h = img.height(), ch = img.channels();
  const int row_len = w * ch;

  // Horizontal pass into a float buffer, using a replicate-padded copy of each row.
  std::vector<float> tmp(static_cast<std::size_t>(row_len) * h);
  std::vector<float> padded(static_cast<std::size_t>(w + 2 * r) * ch);
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* src = img.row(y);
    for (int x = -r; x < w + r; ++x) {
      const int sx = std::clamp(x, 0, w - 1);
      for (int c = 0; c < ch; ++c) padded[(x + r) * ch + c] = src[sx * ch + c];
    }
    float* dst = tmp.data() + static_cast<std::size_t>(y) * row_len;
    std::fill(dst, dst + row_len, 0.0f);
    for (int t = 0; t < ksize; ++t) {
      const float kt = k[t];
      const float* p = padded.data() + t * ch;
      for (int i = 0; i < row_len; ++i) dst[i] += kt * p[i];
    }
  }

  // Vertical pass; rows accumulate contiguously for vectorization.
  Image out(w, h, ch);
  std::vector<float> acc(row_len);
  for (int y = 0; y < h; ++y) {
    std::fill(acc.begin(), acc.end(), 0.0f);
    for (int t = 0; t < ksize; ++t) {
      const int sy = std::clamp(y + t - r, 0, h - 1);
      const float* src = tmp.data() + static_cast<std::size_t>(sy) * row_len;
      const float kt = k[t];
      for (int i = 0; i < row_len; ++i) acc[i] += kt * src[i];
    }
    std::uint8_t* dst = out.row(y);
    for (int i = 0; i < row_len; ++i)
      dst[i] = static_cast<std::uint8_t>(std::clamp(static_cast<int>(acc[i] + 0.5f), 0, 255));
  }
  return out;
}

Mask in_range(const Image& hsv, const HsvRange& range) {
  if (hsv.channels() != 3) throw std::invalid_argument("in_range requires a 3-channel HSV image");
  std::vector<std::uint8_t> out(hsv.pixel_count());
  auto in = hsv.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = range.contains(in[3 * i], in[3 * i + 1], in[3 * i + 2]) ? 255 : 0;
  return Mask(hsv.width(), hsv.height(), std::move(out));
}

namespace {

// One separable pass of a binary min (erode) or max (dilate) filter using window
// counts. `get(i)` and `put(i, v)` address the line being filtered.
template <typename Get, typename Put>
void filter_line(int n, int r, bool erode, BorderMode border, Get&& get, Put&& put,
                 std::vector<int>& prefix) {
  const int padded = n + 2 * r;
  prefix.assign(padded + 1, 0);
  for (int i = 0; i < padded; ++i) {
    const int src = i - r;
    int v;
    if (src < 0 || src >= n)
      v = border == BorderMode::Replicate ? get(std::clamp(src, 0, n - 1)) : 0;
    else
      v = get(src);
    prefix[i + 1] = prefix[i] + v;
  }
  const int k = 2 * r + 1;
  for (int i = 0; i < n; ++i) {
    const int sum = prefix[i + k] - prefix[i];
    put(i, erode ? sum == k : sum > 0);
  }
}

std::vector<std::uint8_t> erode_or_dilate(const std::vector<std::uint8_t>& src, int w, int h, int ksize,
                                          bool erode, BorderMode border) {
  const int r = ksize / 2;
  std::vector<std::uint8_t> rows(src.size()), out(src.size());
  std::vector<int> prefix;
  for (int y = 0; y < h; ++y) {
    const std::size_t base = static_cast<std::size_t>(y) * w;
    filter_line(
        w, r, erode, border, [&](int i) { return src[base + i] ? 1 : 0; },
        [&](int i, bool v) { rows[base + i] = v ? 1 : 0; }, prefix);
  }
  for (int x = 0; x < w; ++x) {
    filter_line(
        h, r, erode, border, [&](int i) { return static_cast<int>(rows[static_cast<std::size_t>(i) * w + x]); },
        [&](int i, bool v) { out[static_cast<std::size_t>(i) * w + x] = v ? 1 : 0; }, prefix);
  }
  return out;
}

}  // namespace

Mask morphology(const Mask& mask, MorphOp op, int ksize, BorderMode border) {
  if (ksize < 1 || ksize % 2 == 0) throw std::invalid_argument("morphology ksize must be odd and >= 1");
  const int w = mask.width(), h = mask.height();
  std::vector<std::uint8_t> bits(mask.pixel_count());
  auto d = mask.data();
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = d[i] ? 1 : 0;
  switch (op) {
    case MorphOp::Erode: bits = erode_or_dilate(bits, w, h, ksize, true, border); break;
    case MorphOp::Dilate: bits = erode_or_dilate(bits, w, h, ksize, false, border); break;
    case MorphOp::Open:
      bits = erode_or_dilate(erode_or_dilate(bits, w, h, ksize, true, border), w, h, ksize, false, border);
      break;
    case MorphOp::Close:
      bits = erode_or_dilate(erode_or_dilate(bits, w, h, ksize, false, border), w, h, ksize, true, border);
      break;
  }
  for (auto& v : bits) v = v ? 255 : 0;
  return Mask(w, h, std::move(bits));
}

Gradient sobel(const Image& gray) {
  if (gray.channels() != 1) throw std::invalid_argument("sobel requires a single-channel image");
  const int w = gray.width(), h = gray.height();
  Gradient g;
  g.width = w;
  g.height = h;
  g.gx.assign(gray.pixel_count(), 0.0f);
  g.gy.assign(gray.pixel_count(), 0.0f);
  auto px = [&](int x, int y) {
    return static_cast<int>(gray.at(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1)));
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int a = px(x - 1, y - 1), b = px(x, y - 1), c = px(x + 1, y - 1);
      const int d = px(x - 1, y), f = px(x + 1, y);
      const int gg = px(x - 1, y + 1), hh = px(x, y + 1), i = px(x + 1, y + 1);
      const std::size_t idx = static_cast<std::size_t>(y) * w + x;
      g.gx[idx] = static_cast<float>((c + 2 * f + i) - (a + 2 * d + gg)) * 0.25f;
      g.gy[idx] = static_cast<float>((gg + 2 * hh + i) - (a + 2 * b + c)) * 0.25f;
    }
  }
  return g;
}

Mask canny(const Image& gray, int low, int high) {
  if (low > high) throw std::invalid_argument("canny requires low <= high");
  const int w = gray.width(), h = gray.height();
  const Gradient g = sobel(gray);
  std::vector<float> mag(gray.pixel_count());
  // Thresholds are on the unnormalized 3x3 Sobel scale, four times the unit gradient.
  for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = 4.0f * std::hypot(g.gx[i], g.gy[i]);

  // 0 = suppressed, 1 = weak, 2 = strong.
  std::vector<std::uint8_t> cls(mag.size(), 0);
  constexpr float kTan22 = 0.41421356f;
  auto m = [&](int x, int y) -> float {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0.0f;
    return mag[static_cast<std::size_t>(y) * w + x];
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * w + x;
      const float v = mag[idx];
      if (v <= static_cast<float>(low)) continue;
      const float ax = std::fabs(g.gx[idx]), ay = std::fabs(g.gy[idx]);
      float n1, n2;
      if (ay <= ax * kTan22) {
        n1 = m(x - 1, y);
        n2 = m(x + 1, y);
      } else if (ax <= ay * kTan22) {
        n1 = m(x, y - 1);
        n2 = m(x, y + 1);
      } else if ((g.gx[idx] > 0) == (g.gy[idx] > 0)) {
        n1 = m(x - 1, y - 1);
        n2 = m(x + 1, y + 1);
      } else {
        n1 = m(x + 1, y - 1);
        n2 = m(x - 1, y + 1);
      }
      // Asymmetric comparison keeps exactly one pixel across a plateau of equal maxima.
      if (v > n1 && v >= n2) cls[idx] = v > static_cast<float>(high) ? 2 : 1;
    }
  }

  std::vector<std::uint8_t> out(mag.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < cls.size(); ++i) {
    if (cls[i] != 2 || out[i]) continue;
    out[i] = 255;
    stack.push_back(i);
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      const int cx = static_cast<int>(cur % w), cy = static_cast<int>(cur / w);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = cx + dx, ny = cy + dy;
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
          if (cls[ni] && !out[ni]) {
            out[ni] = 255;
            stack.push_back(ni);
          }
        }
      }
    }
  }
  return Mask(w, h, std::move(out));
}

namespace {

std::array<std::uint8_t, 256> tile_lut(const std::array<int, 256>& hist, int area, double clip_limit) {
  std::array<std::uint8_t, 256> lut{};
  int nonzero = 0;
  for (int v : hist) nonzero += v > 0;
  if (nonzero <= 1) {
    for (int i = 0; i < 256; ++i) lut[i] = static_cast<std::uint8_t>(i);
    return lut;
  }
  std::array<int, 256> clipped = hist;
  const int limit = std::max(1, static_cast<int>(clip_limit * area / 256.0));
  int excess = 0;
  for (auto& v : clipped) {
    if (v > limit) {
      excess += v - limit;
      v = limit;
    }
  }
  const int each = excess / 256;
  const int rest = excess % 256;
  for (int i = 0; i < 256; ++i) clipped[i] += each + (i < rest ? 1 : 0);
  long long cdf = 0;
  const double scale = 255.0 / area;
  for (int i = 0; i < 256; ++i) {
    cdf += clipped[i];
    lut[i] = static_cast<std::uint8_t>(std::clamp(std::lround(cdf * scale), 0L, 255L));
  }
  return lut;
}

}  // namespace

Image clahe(const Image& img, const ClaheParams& params) {
  if (params.tiles_x < 1 || params.tiles_y < 1) throw std::invalid_argument("CLAHE needs >= 1 tile per axis");
  const int w = img.width(), h = img.height(), ch = img.channels();
  const int nx = std::min(params.tiles_x, w), ny = std::min(params.tiles_y, h);
  std::vector<int> xs(nx + 1), ys(ny + 1);
  for (int i = 0; i <= nx; ++i) xs[i] = static_cast<int>(static_cast<long long>(i) * w / nx);
  for (int j = 0; j <= ny; ++j) ys[j] = static_cast<int>(static_cast<long long>(j) * h / ny);
  std::vector<double> cxs(nx), cys(ny);
  for (int i = 0; i < nx; ++i) cxs[i] = (xs[i] + xs[i + 1] - 1) * 0.5;
  for (int j = 0; j < ny; ++j) cys[j] = (ys[j] + ys[j + 1] - 1) * 0.5;

  Image out(w, h, ch);
  std::vector<std::array<std::uint8_t, 256>> luts(static_cast<std::size_t>(nx) * ny);
  for (int c = 0; c < ch; ++c) {
    for (int tj = 0; tj < ny; ++tj) {
      for (int ti = 0; ti < nx; ++ti) {
        std::array<int, 256> hist{};
        for (int y = ys[tj]; y < ys[tj + 1]; ++y)
          for (int x = xs[ti]; x < xs[ti + 1]; ++x) ++hist[img.at(x, y, c)];
        const int area = (xs[ti + 1] - xs[ti]) * (ys[tj + 1] - ys[tj]);
        luts[static_cast<std::size_t>(tj) * nx + ti] = tile_lut(hist, area, params.clip_limit);
      }
    }
    for (int y = 0; y < h; ++y) {
      int j0 = 0;
      while (j0 + 1 < ny && cys[j0 + 1] <= y) ++j0;
      int j1 = std::min(j0 + 1, ny - 1);
      double wy = 0.0;
      if (y <= cys[0]) j1 = j0 = 0;
      else if (y >= cys[ny - 1]) j0 = j1 = ny - 1;
      else wy = (y - cys[j0]) / (cys[j1] - cys[j0]);
      for (int x = 0; x < w; ++x) {
        int i0 = 0;
        while (i0 + 1 < nx && cxs[i0 + 1] <= x) ++i0;
        int i1 = std::min(i0 + 1, nx - 1);
        double wx = 0.0;
        if (x <= cxs[0]) i1 = i0 = 0;
        else if (x >= cxs[nx - 1]) i0 = i1 = nx - 1;
        else wx = (x - cxs[i0]) / (cxs[i1] - cxs[i0]);
        const int v = img.at(x, y, c);
        const double a = luts[static_cast<std::size_t>(j0) * nx + i0][v];
        const double b = luts[static_cast<std::size_t>(j0) * nx + i1][v];
        const double cc = luts[static_cast<std::size_t>(j1) * nx + i0][v];
        const double d = luts[static_cast<std::size_t>(j1) * nx + i1][v];
        const double top = a * (1 - wx) + b * wx;
        const double bottom = cc * (1 - wx) + d * wx;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(top * (1 - wy) + bottom * wy), 0L, 255L));
      }
    }
  }
  return out;
}

Image resize(const Image& img, int width, int height) {
  if (width < 1 || height < 1) throw std::invalid_argument("resize target must be >= 1x1");
  if (width == img.width() && height == img.height()) return img;
  return resize_with(
      img.width(), img.height(), img.channels(), [&](int x, int y, int c) { return img.at(x, y, c); }, width,
      height);
}

Mask binarize(const Image& gray, int t) {
  if (gray.channels() != 1) throw std::invalid_argument("binarize requires a single-channel image");
  std::vector<std::uint8_t> out(gray.pixel_count());
  auto in = gray.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > t ? 255 : 0;
  return Mask(gray.width(), gray.height(), std::move(out));
}

Mask binarize_band(const Image& gray, int lo, int hi) {
  if (gray.channels() != 1) throw std::invalid_argument("binarize requires a single-channel image");
  std::vector<std::uint8_t> out(gray.pixel_count());
  auto in = gray.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (in[i] >= lo && in[i] <= hi) ? 255 : 0;
  return Mask(gray.width(), gray.height(), std::move(out));
}

Image roi_crop(const Image& img, const Rect& r) {
  if (!r.inside(img.width(), img.height())) throw std::out_of_range("ROI rectangle outside image");
  Image out(r.width, r.height, img.channels());
  const std::size_t len = static_cast<std::size_t>(r.width) * img.channels();
  for (int y = 0; y < r.height; ++y) {
    const std::uint8_t* src = img.row(r.y + y) + static_cast<std::size_t>(r.x) * img.channels();
    std::copy_n(src, len, out.row(y));
  }
  return out;
}

Mask roi_crop(const Mask& mask, const Rect& r) {
  if (!r.inside(mask.width(), mask.height())) throw std::out_of_range("ROI rectangle outside mask");
  std::vector<std::uint8_t> out(static_cast<std::size_t>(r.width) * r.height);
  for (int y = 0; y < r.height; ++y)
    std::copy_n(mask.row(r.y + y) + r.x, r.width, out.begin() + static_cast<std::ptrdiff_t>(y) * r.width);
  return Mask(r.width, r.height, std::move(out));
}

Rect bottom_roi(int width, int height, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw std::invalid_argument("ROI fraction must be in (0,1]");
  const int keep = std::max(1, static_cast<int>(std::lround(height * keep_fraction)));
  return Rect{0, height - keep, width, keep};
}

}  // namespace rowpilot::imgcore
