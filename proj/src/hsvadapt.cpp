#include "rowpilot/hsvadapt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "rowpilot/imgcore.hpp"

namespace rowpilot::hsvadapt {

namespace {

constexpr double kRadPerBin = 2.0 * std::numbers::pi / kHueBins;

[[noreturn]] void degenerate(const char* why) {
  throw DetectionError(DetectionError::Kind::DegenerateHistogram, why);
}

}  // namespace

double hue_wrap(double h) {
  double r = std::fmod(h, static_cast<double>(kHueBins));
  if (r < 0) r += kHueBins;
  return r;
}

double hue_delta(double a, double b) {
  double d = hue_wrap(a - b);
  if (d > kHueBins / 2.0) d -= kHueBins;
  return d;
}

void HsvAccumulator::add(int h, int s, int v) {
  sin_ += std::sin(h * kRadPerBin);
  cos_ += std::cos(h * kRadPerBin);
  s_ += s;
  v_ += v;
  ++n_;
}

HsvMean HsvAccumulator::mean() const {
  if (n_ == 0) throw std::logic_error("mean of an empty sample");
  double h = hue_wrap(std::atan2(sin_, cos_) / kRadPerBin);
  // Snap sub-ulp noise so a constant hue averages to itself.
  const double r = std::round(h);
  if (std::abs(h - r) < 1e-9) h = hue_wrap(r);
  return {h, s_ / n_, v_ / n_};
}

bool sample_into(HsvAccumulator& acc, const Image& hsv, Point2d center, double area_avg, std::mt19937_64& rng,
                 int count) {
  if (hsv.channels() != 3) throw std::invalid_argument("sample_pixels expects a 3-channel HSV image");
  const double r = sample_radius(area_avg);
  if (!(r >= 1.0)) return false;
  std::vector<std::pair<int, int>> disk;
  const int x0 = std::max(0, static_cast<int>(std::floor(center.x() - r)));
  const int x1 = std::min(hsv.width() - 1, static_cast<int>(std::ceil(center.x() + r)));
  const int y0 = std::max(0, static_cast<int>(std::floor(center.y() - r)));
  const int y1 = std::min(hsv.height() - 1, static_cast<int>(std::ceil(center.y() + r)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if ((x - center.x()) * (x - center.x()) + (y - center.y()) * (y - center.y()) <= r * r) disk.emplace_back(x, y);
  if (disk.empty()) return false;
  std::uniform_int_distribution<std::size_t> pick(0, disk.size() - 1);
  for (int i = 0; i < count; ++i) {
    const auto [x, y] = disk[pick(rng)];
    acc.add(hsv.at(x, y, 0), hsv.at(x, y, 1), hsv.at(x, y, 2));
  }
  return true;
}

std::optional<HsvMean> sample_pixels(const Image& hsv, Point2d center, double area_avg, std::mt19937_64& rng,
                                     int count) {
  HsvAccumulator acc;
  if (!sample_into(acc, hsv, center, area_avg, rng, count) || acc.count() == 0) return std::nullopt;
  return acc.mean();
}

void record_sample(CalibrationState& state, const Image& hsv, const CropObservation& obs, double deviation_deg,
                   double timestamp, std::mt19937_64& rng) {
  if (!(std::abs(deviation_deg) < kDeviationGateDeg)) return;
  if (obs.area1 <= 0 || obs.area2 <= 0) return;
  const double area_avg = 0.5 * static_cast<double>(obs.area1 + obs.area2);
  HsvAccumulator acc;
  sample_into(acc, hsv, obs.c1, area_avg, rng);
  sample_into(acc, hsv, obs.c2, area_avg, rng);
  if (acc.count() == 0) return;
  state.buffer.push_back({timestamp, obs.c1, obs.c2, obs.area1, obs.area2, acc.mean()});
  while (state.buffer.size() > kBufferCapacity) state.buffer.pop_front();
}

HsvRange shift_hue(const HsvRange& range, int shift) {
  std::vector<HsvBand> bands;
  for (HsvBand b : range.bands()) {
    b.low[0] = std::clamp(b.low[0] + shift, 0, kHueBins - 1);
    b.high[0] = std::clamp(b.high[0] + shift, 0, kHueBins - 1);
    bands.push_back(b);
  }
  return HsvRange(std::move(bands));
}

PriorUpdate prior_update(const CalibrationState& state, double max_shift) {
  PriorUpdate u{state.active};
  if (state.buffer.empty()) {
    u.mean_h = state.previous_mean_h.value_or(0.0);
    return u;
  }
  double sn = 0, cs = 0;
  for (const auto& s : state.buffer) {
    sn += std::sin(s.mean_hsv.h * kRadPerBin);
    cs += std::cos(s.mean_hsv.h * kRadPerBin);
  }
  u.mean_h = hue_wrap(std::atan2(sn, cs) / kRadPerBin);
  if (!state.previous_mean_h) return u;  // first window only establishes the baseline
  u.delta = hue_delta(u.mean_h, *state.previous_mean_h);
  if (std::abs(u.delta) > max_shift) {
    u.fallback = true;
    return u;
  }
  u.applied_shift = static_cast<int>(std::lround(u.delta));
  u.range = shift_hue(state.active, u.applied_shift);
  return u;
}

void commit(CalibrationState& state, const PriorUpdate& update) {
  if (update.fallback) throw std::logic_error("fallback updates are resolved through otsu_fallback");
  state.active = update.range;
  if (!state.previous_mean_h)
    state.previous_mean_h = update.mean_h;
  else
    // Track the hue the range is centred on, so sub-bin residuals keep accumulating.
    state.previous_mean_h = hue_wrap(*state.previous_mean_h + update.applied_shift);
}

HueHistogram HueHistogram::from_image(const Image& hsv, const std::optional<HsvRange>& sv_gate) {
  if (hsv.channels() != 3) throw std::invalid_argument("hue histogram expects a 3-channel HSV image");
  HueHistogram hist;
  const auto data = hsv.data();
  for (std::size_t i = 0; i < data.size(); i += 3) {
    const int h = data[i], s = data[i + 1], v = data[i + 2];
    if (sv_gate) {
      bool keep = false;
      for (const auto& b : sv_gate->bands())
        if (s >= b.low[1] && s <= b.high[1] && v >= b.low[2] && v <= b.high[2]) keep = true;
      if (!keep) continue;
    }
    ++hist.bins_[std::min(h, kHueBins - 1)];
  }
  return hist;
}

std::int64_t HueHistogram::total() const {
  std::int64_t t = 0;
  for (auto b : bins_) t += b;
  return t;
}

int HueHistogram::nonempty() const {
  return static_cast<int>(std::count_if(bins_.begin(), bins_.end(), [](auto b) { return b > 0; }));
}

int otsu_threshold(const HueHistogram& hist) {
  if (hist.nonempty() < 2) degenerate("hue histogram has fewer than two occupied bins");
  for (auto b : hist.bins())
    if (b < 0) throw std::invalid_argument("negative histogram bin");
  // Between-class variance is (N*S0 - N0*S)^2 / (N0*N1) up to a constant factor.
  // Compared by cross-multiplication; exact in 128 bits up to ~4e5 samples.
  const std::int64_t n = hist.total();
  std::int64_t s = 0;
  for (int i = 0; i < kHueBins; ++i) s += i * hist[i];
  const bool exact = n <= 400000;

  int best_t = -1;
  __int128 best_num = 0, best_den = 1;
  long double best_f = -1;
  std::int64_t n0 = 0, s0 = 0;
  for (int t = 0; t < kHueBins - 1; ++t) {
    n0 += hist[t];
    s0 += static_cast<std::int64_t>(t) * hist[t];
    const std::int64_t n1 = n - n0;
    if (n0 == 0 || n1 == 0) continue;
    const __int128 d = static_cast<__int128>(n) * s0 - static_cast<__int128>(n0) * s;
    if (exact) {
      const __int128 num = d * d, den = static_cast<__int128>(n0) * n1;
      if (best_t < 0 || num * best_den > best_num * den) {
        best_t = t;
        best_num = num;
        best_den = den;
      }
    } else {
      const long double dd = static_cast<long double>(d);
      const long double f = dd * dd / (static_cast<long double>(n0) * static_cast<long double>(n1));
      if (best_t < 0 || f > best_f) {
        best_t = t;
        best_f = f;
      }
    }
  }
  return best_t;
}

HsvRange otsu_fallback(const Image& hsv, const HsvRange& old_range) {
  const HueHistogram hist = HueHistogram::from_image(hsv, old_range);
  const int t = otsu_threshold(hist);
  struct ClassStats {
    int lo = -1, hi = -1;
    double mean = 0;
    std::int64_t n = 0;
  };
  auto stats = [&](int a, int b) {
    ClassStats c;
    double sum = 0;
    for (int i = a; i <= b; ++i) {
      if (hist[i] == 0) continue;
      if (c.lo < 0) c.lo = i;
      c.hi = i;
      c.n += hist[i];
      sum += static_cast<double>(i) * hist[i];
    }
    c.mean = c.n ? sum / c.n : -1;
    return c;
  };
  const ClassStats lower = stats(0, t), upper = stats(t + 1, kHueBins - 1);
  auto is_plant = [](const ClassStats& c) { return c.n > 0 && c.mean >= kPlantHueLow && c.mean <= kPlantHueHigh; };
  const ClassStats* plant = nullptr;
  if (is_plant(lower) && is_plant(upper)) {
    const double mid = 0.5 * (kPlantHueLow + kPlantHueHigh);
    plant = std::abs(lower.mean - mid) <= std::abs(upper.mean - mid) ? &lower : &upper;
  } else if (is_plant(lower)) {
    plant = &lower;
  } else if (is_plant(upper)) {
    plant = &upper;
  }
  if (!plant) degenerate("no Otsu class has a plant-coloured mean hue");
  std::vector<HsvBand> bands;
  for (HsvBand b : old_range.bands()) {
    b.low[0] = plant->lo;
    b.high[0] = plant->hi;
    if (std::find(bands.begin(), bands.end(), b) == bands.end()) bands.push_back(b);
  }
  return HsvRange(std::move(bands));
}

Calibrator::Calibrator(CalibConfig cfg, HsvRange initial) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
  state_.active = std::move(initial);
}

CalibLogEntry Calibrator::observe(const std::string& frame_id, const Image& rgb, double timestamp,
                                  double deviation_deg) {
  CalibLogEntry entry;
  entry.frame = frame_id;
  if (!window_start_) window_start_ = timestamp;
  rowdetect::PreprocessParams pp = cfg_.preprocess;
  pp.green = state_.active;
  const auto pre = rowdetect::preprocess(rgb, pp);
  if (std::abs(deviation_deg) < cfg_.deviation_gate) {
    try {
      const auto d = rowdetect::contour_target_detail(pre.roi_mask);
      const Point2d off(pre.roi.x, pre.roi.y);
      record_sample(state_, pre.hsv, {d.left_centroid + off, d.right_centroid + off, d.left.m00, d.right.m00},
                    deviation_deg, timestamp, rng_);
      if (!state_.buffer.empty() && state_.buffer.back().timestamp == timestamp)
        entry.mean_h = state_.buffer.back().mean_hsv.h;
    } catch (const DetectionError&) {
      // No usable croplines in this frame; nothing to sample.
    }
  }
  if (timestamp - *window_start_ >= cfg_.calib_window && !state_.buffer.empty()) {
    const PriorUpdate u = prior_update(state_, cfg_.max_shift);
    entry.delta = u.delta;
    if (u.fallback) {
      entry.fallback_used = true;
      try {
        state_.active = otsu_fallback(pre.hsv, state_.active);
        state_.previous_mean_h = u.mean_h;
        entry.updated = true;
      } catch (const DetectionError&) {
        // Keep the previous range.
      }
    } else {
      commit(state_, u);
      entry.updated = true;
    }
    state_.buffer.clear();
    window_start_ = timestamp;
  }
  return entry;
}

}  // namespace rowpilot::hsvadapt
