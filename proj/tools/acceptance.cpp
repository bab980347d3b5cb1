// End-to-end acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
// Tolerances and fixtures are pinned here.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "rowpilot/dockdetect.hpp"
#include "rowpilot/fieldsim.hpp"
#include "rowpilot/hsvadapt.hpp"
#include "rowpilot/imgcore.hpp"
#include "rowpilot/robotsim.hpp"
#include "rowpilot/rowdetect.hpp"

namespace fs = std::filesystem;
using namespace rowpilot;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string id;
  std::string title;
  double budget_s;  // wall-clock limit, part of the criterion
  std::function<Verdict()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Oracle equivalence of the exact primitives.
Verdict oracles() {
  std::mt19937_64 rng(2024);
  int moment_fail = 0, otsu_fail = 0, mec_fail = 0, blur_fail = 0;

  std::uniform_int_distribution<int> side(4, 48);
  std::uniform_real_distribution<double> density(0.1, 0.7);
  for (int i = 0; i < 1000; ++i) {
    const int w = side(rng), h = side(rng);
    std::bernoulli_distribution on(density(rng));
    Mask m(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) m.set(x, y, on(rng));
    rowdetect::MomentSet total;
    bool ok = true;
    for (const auto& c : rowdetect::find_contours(m)) {
      const auto s = rowdetect::region_moments(m, c);
      ok &= s == oracle::flood_moments(m, c.points.front().x, c.points.front().y);
      total.m00 += s.m00, total.m10 += s.m10, total.m01 += s.m01;
    }
    ok &= total == oracle::brute_moments(m);
    moment_fail += !ok;
  }

  std::uniform_int_distribution<int> count(0, 5000), nbins(2, 60), bin(0, hsvadapt::kHueBins - 1);
  for (int i = 0; i < 500;) {
    hsvadapt::HueHistogram hist;
    const int k = nbins(rng);
    for (int j = 0; j < k; ++j) hist[bin(rng)] += count(rng) + 1;
    if (hist.nonempty() < 2) continue;
    otsu_fail += hsvadapt::otsu_threshold(hist) != oracle::otsu_exhaustive(hist);
    ++i;
  }

  std::uniform_real_distribution<double> coord(-100, 100);
  std::uniform_int_distribution<int> npts(1, 25);
  for (int i = 0; i < 200; ++i) {
    std::vector<Point2d> pts(npts(rng));
    for (auto& p : pts) p = Point2d(coord(rng), coord(rng));
    const auto fast = geometry::min_enclosing_circle(pts);
    const auto slow = oracle::mec_brute(pts);
    mec_fail += std::abs(fast.radius - slow.radius) > 1e-9 * std::max(1.0, slow.radius) ||
                (fast.center - slow.center).norm() > 1e-9 * std::max(1.0, slow.radius);
  }

  std::uniform_int_distribution<int> px(0, 255);
  for (int k : {3, 5, 9, 15, 25}) {
    Image img(45, 31, 3);
    for (auto& v : img.data()) v = static_cast<std::uint8_t>(px(rng));
    const Image fast = imgcore::gaussian_blur(img, k);
    const Image slow = oracle::direct_blur(img, k, imgcore::default_sigma(k));
    for (std::size_t i = 0; i < fast.data().size(); ++i) blur_fail += std::abs(fast.data()[i] - slow.data()[i]) > 1;
  }

  return {moment_fail + otsu_fail + mec_fail + blur_fail == 0,
          fmt("moment mismatches %d/1000, otsu %d/500, mec %d/200, blur pixels off by >1: %d", moment_fail,
              otsu_fail, mec_fail, blur_fail)};
}

// Field corpus shared by the detector comparison and the timing check.
const rowdetect::BenchmarkResult& field_bench() {
  static const rowdetect::BenchmarkResult result = [] {
    const fieldsim::FieldConfig field;
    const fieldsim::DockConfig dock;
    fieldsim::CorpusOptions opt;
    opt.frames = 62;
    opt.seed = 1;
    std::vector<rowdetect::BenchFrame> corpus;
    for (int i = 0; i < opt.frames; ++i) {
      auto f = fieldsim::corpus_frame(field, dock, opt, i);
      const std::string id = fmt("frame_%03d", i);
      corpus.push_back({id, std::move(f.image), {id, f.vp, f.target}});
    }
    rowdetect::BenchmarkOptions bo;
    bo.seed = 1;
    const rowdetect::Detector dets[] = {rowdetect::Detector::Contour, rowdetect::Detector::Pht,
                                        rowdetect::Detector::Fpe};
    return rowdetect::benchmark(corpus, dets, bo);
  }();
  return result;
}

const rowdetect::DetectorRun& run_of(rowdetect::Detector d) {
  for (const auto& r : field_bench().runs)
    if (r.detector == d) return r;
  throw std::logic_error("detector missing from the benchmark");
}

Verdict detector_ordering() {
  const auto& c = run_of(rowdetect::Detector::Contour).metrics;
  const auto& p = run_of(rowdetect::Detector::Pht).metrics;
  const auto& f = run_of(rowdetect::Detector::Fpe).metrics;
  const double ca = c.accuracy.value_or(0), pa = p.accuracy.value_or(0), fa = f.accuracy.value_or(0);
  const double cf = c.f_score.value_or(0);
  return {ca >= pa && pa > fa && ca > fa && cf >= 0.90,
          fmt("accuracy contour %.3f, pht %.3f, fpe %.3f; contour F %.3f", ca, pa, fa, cf)};
}

Verdict detector_timing() {
  const double c = run_of(rowdetect::Detector::Contour).timing.median();
  const double p = run_of(rowdetect::Detector::Pht).timing.median();
  return {c < p, fmt("median per frame: contour %.0f us, pht %.0f us", c, p)};
}

Verdict dock_detectors() {
  const fieldsim::FieldConfig field;
  const fieldsim::DockConfig dock;
  fieldsim::CorpusOptions opt;
  opt.scene = fieldsim::SceneKind::Dock;
  opt.frames = 100;
  opt.seed = 1;
  int def_ok = 0, hough_ok = 0;
  double max_offset = 0;
  for (int i = 0; i < opt.frames; ++i) {
    const auto f = fieldsim::corpus_frame(field, dock, opt, i);
    const auto& mid = f.circles.at(1);
    const Point2d dot(mid.cx, mid.cy);
    def_ok += dockdetect::target_on_dot(dockdetect::def_circle(f.image).target, dot, mid.r);
    hough_ok += dockdetect::target_on_dot(dockdetect::hough_only(f.image).target, dot, mid.r);
    max_offset = std::max(max_offset, std::abs(f.meta.offset));
  }
  const int gap = def_ok - hough_ok;
  return {gap >= 10,
          fmt("def-circle %d%%, hough-only %d%%, gap %+d points (offsets up to %.2f m, glare %s)", def_ok, hough_ok,
              gap, max_offset, dock.glare ? "on" : "off")};
}

Verdict docking_episodes() {
  robotsim::EpisodeConfig cfg;
  cfg.scenario = robotsim::Scenario::Docking;
  // Returning to the station happens on a low battery, so docking runs at the slow speed.
  cfg.initial_charge = 0.2;
  int docked = 0;
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto log = robotsim::run_episode(cfg, seed);
    const bool ok = log.outcome == robotsim::Outcome::Docked && log.dock_success;
    docked += ok;
    if (ok) worst = std::max(worst, std::abs(*log.final_lateral));
  }
  return {docked >= 80, fmt("%d/100 docked, worst lateral error on success %.3f m (funnel %.2f m)", docked, worst,
                            cfg.mission.funnel_tolerance)};
}

Verdict navigation_episodes() {
  robotsim::EpisodeConfig nominal;
  int nominal_hits = 0, full_rows = 0;
  constexpr int kNominalSeeds = 10, kDriftSeeds = 50;
  for (std::uint64_t seed = 1; seed <= kNominalSeeds; ++seed) {
    const auto log = robotsim::run_episode(nominal, seed);
    nominal_hits += !log.collisions.empty();
    full_rows += log.outcome == robotsim::Outcome::Completed && log.rows_completed == nominal.mission.rows;
  }
  robotsim::EpisodeConfig drift = nominal;
  drift.imu = robotsim::ImuConfig::drifting();
  int drift_hits = 0;
  for (std::uint64_t seed = 1; seed <= kDriftSeeds; ++seed) drift_hits += !robotsim::run_episode(drift, seed).collisions.empty();
  const double nominal_rate = static_cast<double>(nominal_hits) / kNominalSeeds;
  const double drift_rate = static_cast<double>(drift_hits) / kDriftSeeds;
  return {nominal_hits == 0 && full_rows == kNominalSeeds && drift_rate > nominal_rate,
          fmt("nominal: %d/%d runs collide, %d/%d cover all rows; drift: %d/%d collide", nominal_hits,
              kNominalSeeds, full_rows, kNominalSeeds, drift_hits, kDriftSeeds)};
}

// Twenty frames closing on the end of aisle 2, 2 cm apart, starting 16 cm short of it.
Verdict row_end_fixture() {
  constexpr int kFrames = 20;
  constexpr int kExpectedTurnFrame = 12;  // traced by hand from the rendered sequence
  const fieldsim::FieldConfig field;
  const fieldsim::FieldScene scene(field, 1);
  const double threshold = rowdetect::row_end_threshold(360 * 240);
  std::vector<double> history;
  double prev = std::numeric_limits<double>::infinity();
  bool monotone = true;
  int fired = -1;
  for (int i = 0; i < kFrames; ++i) {
    const double short_of_end = 0.16 - 0.02 * i;
    const fieldsim::Pose2d pose{field.aisle_center_x(2, 0), field.row_length - short_of_end, std::numbers::pi / 2};
    const auto frame = scene.render(pose, 0.0, 100 + i);
    const auto pre = rowdetect::preprocess(frame.image);
    history.push_back(static_cast<double>(rowdetect::green_area(pre.roi_mask)) * 86400.0 /
                      static_cast<double>(frame.image.width() * frame.image.height()));
    const double smoothed = rowdetect::smoothed_area(history);
    monotone &= smoothed <= prev;
    prev = smoothed;
    if (fired < 0 && rowdetect::row_end(history, threshold)) fired = i;
  }
  return {monotone && fired == kExpectedTurnFrame,
          fmt("smoothed area %s; turn fired at frame %d, expected %d", monotone ? "non-increasing" : "rises somewhere",
              fired, kExpectedTurnFrame)};
}

// +20 hue drift across 50 frames; recall against the rendered crop masks.
Verdict adaptation() {
  fieldsim::FieldConfig field;
  field.plant_hue = 60.0;  // the drift carries the crop past the top of the frozen band
  field.hue_drift_per_hour = 5.0;
  const double span_hours = 20.0 / field.hue_drift_per_hour;
  const fieldsim::FieldScene scene(field, 3);
  hsvadapt::Calibrator calibrator{hsvadapt::CalibConfig{}};
  long hit_adapt = 0, hit_frozen = 0, truth = 0;
  for (int i = 0; i < 50; ++i) {
    const double hours = span_hours * i / 49.0;
    const fieldsim::Pose2d pose{field.aisle_center_x(i % field.aisles, 0), 0.3 + 0.05 * i, std::numbers::pi / 2};
    const auto frame = scene.render(pose, hours, 1000 + i);
    rowdetect::PreprocessParams adapted;
    adapted.green = calibrator.active();
    const Mask a = rowdetect::preprocess(frame.image, adapted).crop_mask;
    const Mask f = rowdetect::preprocess(frame.image).crop_mask;
    for (int y = 0; y < frame.image.height(); ++y)
      for (int x = 0; x < frame.image.width(); ++x)
        if (frame.row_mask.test(x, y)) ++truth, hit_adapt += a.test(x, y), hit_frozen += f.test(x, y);
    calibrator.observe(fmt("frame_%03d", i), frame.image, hours * 3600.0);
  }
  const double ra = static_cast<double>(hit_adapt) / truth, rf = static_cast<double>(hit_frozen) / truth;
  return {ra >= rf, fmt("recall adapted %.4f, frozen %.4f", ra, rf)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Every subcommand twice with the same config and seed; timing files are skipped.
Verdict determinism(const std::string& bin, const fs::path& scratch) {
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  const std::string d = scratch.string();
  auto run = [&](const std::string& args) {
    return std::system((bin + " " + args + " >/dev/null 2>&1").c_str()) == 0;
  };
  bool ok = true;
  for (int k = 0; k < 2; ++k) {
    const std::string o = d + "/run" + std::to_string(k);
    ok &= run("gen --scene field --n 8 --seed 4 --out " + o + "/field");
    ok &= run("gen --scene dock --n 4 --seed 4 --out " + o + "/dock");
    ok &= run("bench --corpus " + o + "/field --out " + o + "/bench");
    ok &= run("bench --corpus " + o + "/dock --out " + o + "/bench_dock");
    ok &= run("calib --corpus " + o + "/field --out " + o + "/calib");
    ok &= run("pipeline --in " + o + "/field/frame_002.ppm --out " + o + "/pipe.ppm --report " + o + "/pipe.json");
    ok &= run("dock --in " + o + "/dock/frame_001.ppm --out " + o + "/dock.ppm --report " + o + "/dock.jsonl");
    ok &= run("sim --scenario docking --seed 4 --frames-every 40 --out " + o + "/sim");
  }
  if (!ok) return {false, "a subcommand exited non-zero"};
  int compared = 0, differ = 0;
  const fs::path a = scratch / "run0";
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().filename() == "timing.csv") continue;
    const fs::path rel = fs::relative(e.path(), a);
    ++compared;
    differ += slurp(e.path()) != slurp(scratch / "run1" / rel);
  }
  return {differ == 0 && compared > 0, fmt("%d output files compared, %d differ", compared, differ)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Runs the acceptance criteria and prints one line per criterion."};
  std::vector<std::string> only;
  std::string bin = ROWPILOT_BIN;
  app.add_option("criteria", only, "Subset to run, e.g. AC2 AC7");
  app.add_option("--bin", bin, "rowpilot executable used for the determinism check");
  CLI11_PARSE(app, argc, argv);

  const fs::path scratch = fs::temp_directory_path() / "rowpilot_acceptance";
  const std::vector<Criterion> all{
      {"AC1", "oracle equivalence", 120, oracles},
      {"AC2", "detector comparison", 300, detector_ordering},
      {"AC3", "detector timing", 300, detector_timing},
      {"AC4", "def-circle vs hough", 300, dock_detectors},
      {"AC5", "docking episodes", 600, docking_episodes},
      {"AC6", "navigation episodes", 900, navigation_episodes},
      {"AC7", "row-end rule", 120, row_end_fixture},
      {"AC8", "hue adaptation", 300, adaptation},
      {"AC9", "determinism", 600, [&] { return determinism(bin, scratch); }},
  };

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = v.pass && secs <= c.budget_s;
    failed += !pass;
    std::printf("%s %s %s: %s [%.1f s of %.0f s]\n", pass ? "PASS" : "FAIL", c.id.c_str(), c.title.c_str(),
                v.detail.c_str(), secs, c.budget_s);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
