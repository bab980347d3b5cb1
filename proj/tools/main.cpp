#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "annotate.hpp"
#include "config.hpp"
#include "rowpilot/dockdetect.hpp"
#include "rowpilot/errors.hpp"
#include "rowpilot/fieldsim.hpp"
#include "rowpilot/hsvadapt.hpp"
#include "rowpilot/robotsim.hpp"
#include "rowpilot/rowdetect.hpp"
#include "rowpilot/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace rowpilot;
using rowpilot::cli::RunConfig;
using rowpilot::cli::draw_circle;
using rowpilot::cli::draw_cross;

namespace {

// Usage errors exit 1, anything that fails while running exits 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON configuration file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Run seed (overrides the config)");
  app->add_option("--jobs", c.jobs, "Worker threads")->check(CLI::PositiveNumber);
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? cli::parse_config(json::object()) : cli::load_config(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.corpus.seed = *c.seed;
    cfg.calib.seed = *c.seed;
  }
  if (c.jobs) {
    cfg.jobs = *c.jobs;
    cfg.corpus.jobs = *c.jobs;
  }
  return cfg;
}

json meta(const RunConfig& cfg) {
  return {{"tool", "rowpilot"},
          {"version", kVersion},
          {"seed", cfg.seed},
          {"config_hash", cli::config_hash(cfg)},
          {"config", cli::output_json(cfg)}};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fieldsim::write_atomic(path, text);
}

void write_image(const fs::path& path, const Image& img) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fieldsim::write_atomic(path, encode_pnm(img));
}

// Text goes to `path`, or stdout when the path is empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text << std::flush;
  } else {
    write_text(path, text);
  }
}

json point(const std::optional<Point2d>& p) {
  if (!p) return nullptr;
  return json::array({p->x(), p->y()});
}

// Runs fn(i) for i in [0, n) on `jobs` threads; results are written by index.
template <class F>
void parallel_for(int n, int jobs, F&& fn) {
  jobs = std::clamp(jobs, 1, std::max(1, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------- pipeline

struct PipelineArgs {
  Common common;
  std::string in, out, report, detector = "contour";
};

int run_pipeline(const PipelineArgs& a) {
  const RunConfig cfg = resolve(a.common);
  const auto det = rowdetect::parse_detector(a.detector);
  if (!det) throw UsageError("unknown detector '" + a.detector + "'");
  const Image rgb = read_pnm(a.in);
  if (rgb.channels() != 3) throw std::runtime_error(a.in + ": expected a colour (P6) image");
  spdlog::info("pipeline {} ({}x{})", a.in, rgb.width(), rgb.height());

  const auto pre = rowdetect::preprocess(rgb, cfg.preprocess);
  const Point2d offset(pre.roi.x, pre.roi.y);
  const double scale = 86400.0 / (static_cast<double>(rgb.width()) * rgb.height());
  const double area = static_cast<double>(rowdetect::green_area(pre.roi_mask)) * scale;

  json r;
  r["frame"] = fs::path(a.in).filename().string();
  r["detector"] = a.detector;
  r["green_area"] = area;
  r["row_end_threshold"] = cfg.row_end.threshold;
  r["below_row_end_threshold"] = area < cfg.row_end.threshold;
  Image annotated = rgb;
  if (*det == rowdetect::Detector::Contour) {
    try {
      const auto d = rowdetect::contour_target_detail(pre.roi_mask, cfg.detectors.contour);
      const Point2d c1 = d.left_centroid + offset, c2 = d.right_centroid + offset, c = d.target.point() + offset;
      r["c1"] = point(c1);
      r["c2"] = point(c2);
      r["target"] = point(c);
      draw_cross(annotated, c1, cli::kGreen);
      draw_cross(annotated, c2, cli::kGreen);
      draw_circle(annotated, c, 4.0, cli::kGreen);
      draw_cross(annotated, c, cli::kGreen);
    } catch (const DetectionError& e) {
      r["target"] = nullptr;
      r["error"] = e.what();
    }
  } else {
    const auto t = rowdetect::detect(*det, pre, rowdetect::frame_seed(cfg.seed, 0), cfg.detectors);
    r["target"] = t ? point(t->point()) : json(nullptr);
    if (t) draw_cross(annotated, t->point(), cli::kGreen);
  }
  const Rect roi = pre.roi;
  for (int x = roi.x; x < roi.x + roi.width; ++x) {
    if (roi.y < annotated.height())
      for (int k = 0; k < 3; ++k) annotated.at(x, roi.y, k) = cli::kYellow[k];
  }
  r["meta"] = meta(cfg);
  if (!a.out.empty()) write_image(a.out, annotated);
  emit(a.report, r.dump() + "\n");
  return 0;
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  Common common;
  std::string scene, out;
  std::optional<int> n;
};

int run_gen(const GenArgs& a) {
  RunConfig cfg = resolve(a.common);
  if (!a.scene.empty()) cfg.corpus.scene = a.scene == "dock" ? fieldsim::SceneKind::Dock : fieldsim::SceneKind::Field;
  if (a.n) cfg.corpus.frames = *a.n;
  spdlog::info("gen {} frames into {}", cfg.corpus.frames, a.out);
  fs::create_directories(a.out);
  const auto summary = fieldsim::gen_corpus(cfg.field, cfg.dock, cfg.corpus, a.out, cli::config_hash(cfg));
  json r = meta(cfg);
  r["scene"] = summary.scene;
  r["frames"] = summary.frames;
  r["manifest_hash"] = summary.manifest_hash;
  write_text(fs::path(a.out) / "run.json", r.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  Common common;
  std::string corpus, out, detectors = "all";
};

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream s;
  s.precision(6);
  s << std::fixed << *v;
  return s.str();
}

int run_bench(const BenchArgs& a) {
  const RunConfig cfg = resolve(a.common);
  const auto entries = fieldsim::read_manifest(a.corpus);
  if (entries.empty()) throw std::runtime_error(a.corpus + ": empty manifest");
  const bool dock = entries.front().meta.scene == "dock";

  std::vector<std::string> names;
  std::stringstream list(a.detectors);
  for (std::string item; std::getline(list, item, ',');)
    if (!item.empty()) names.push_back(item);
  if (names == std::vector<std::string>{"all"})
    names = dock ? std::vector<std::string>{"def_circle", "hough"}
                 : std::vector<std::string>{"contour", "pht", "lsd", "fpe"};

  std::vector<Image> frames(entries.size());
  parallel_for(static_cast<int>(entries.size()), cfg.jobs,
               [&](int i) { frames[i] = read_pnm((fs::path(a.corpus) / entries[i].image).string()); });

  std::ostringstream metrics, timing;
  json report = meta(cfg);
  report["corpus"] = fs::path(a.corpus).filename().string();
  report["frames"] = entries.size();
  json results = json::object();
  timing << "detector,frame,micros\n";

  if (dock) {
    metrics << "detector,frames,correct,accuracy\n";
    for (const auto& name : names) {
      if (name != "def_circle" && name != "hough") throw UsageError("unknown dock detector '" + name + "'");
      std::vector<int> ok(entries.size(), 0);
      std::vector<double> micros(entries.size(), 0.0);
      parallel_for(static_cast<int>(entries.size()), cfg.jobs, [&](int i) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto res = name == "def_circle" ? dockdetect::def_circle(frames[i], cfg.def_circle)
                                              : dockdetect::hough_only(frames[i], cfg.def_circle.hough);
        micros[i] = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
        const auto& c = entries[i].circles;
        if (c.size() == 3) ok[i] = dockdetect::target_on_dot(res.target, Point2d(c[1].cx, c[1].cy), c[1].r);
      });
      int correct = 0;
      for (std::size_t i = 0; i < entries.size(); ++i) {
        correct += ok[i];
        timing << name << ',' << entries[i].id << ',' << fmt_opt(micros[i]) << '\n';
      }
      const double acc = static_cast<double>(correct) / entries.size();
      metrics << name << ',' << entries.size() << ',' << correct << ',' << fmt_opt(acc) << '\n';
      results[name] = {{"correct", correct}, {"accuracy", acc}};
    }
  } else {
    std::vector<rowdetect::Detector> dets;
    for (const auto& name : names) {
      const auto d = rowdetect::parse_detector(name);
      if (!d) throw UsageError("unknown detector '" + name + "'");
      dets.push_back(*d);
    }
    std::vector<rowdetect::BenchFrame> corpus;
    for (std::size_t i = 0; i < entries.size(); ++i)
      corpus.push_back({entries[i].id, std::move(frames[i]), {entries[i].id, entries[i].vp, entries[i].target}});
    rowdetect::BenchmarkOptions opt;
    opt.preprocess = cfg.preprocess;
    opt.detectors = cfg.detectors;
    opt.seed = cfg.seed;
    opt.radius = cfg.bench.radius;
    opt.jobs = cfg.jobs;
    const auto result = rowdetect::benchmark(corpus, dets, opt);
    metrics << "detector,tp,fp,fn,tn,accuracy,precision,recall,f_score,strict_accuracy\n";
    for (const auto& run : result.runs) {
      const auto& m = run.metrics;
      const std::string name = rowdetect::to_string(run.detector);
      metrics << name << ',' << m.tp << ',' << m.fp << ',' << m.fn << ',' << m.tn << ',' << fmt_opt(m.accuracy)
              << ',' << fmt_opt(m.precision) << ',' << fmt_opt(m.recall) << ',' << fmt_opt(m.f_score) << ','
              << fmt_opt(m.strict_accuracy) << '\n';
      for (std::size_t i = 0; i < run.timing.frames.size(); ++i)
        timing << name << ',' << run.timing.frames[i] << ',' << fmt_opt(run.timing.micros[i]) << '\n';
      const auto opt_json = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
      results[name] = {{"tp", m.tp},
                       {"fp", m.fp},
                       {"fn", m.fn},
                       {"tn", m.tn},
                       {"accuracy", opt_json(m.accuracy)},
                       {"precision", opt_json(m.precision)},
                       {"recall", opt_json(m.recall)},
                       {"f_score", opt_json(m.f_score)}};
    }
  }
  report["metrics"] = results;
  const fs::path out = a.out.empty() ? fs::path(a.corpus) : fs::path(a.out);
  fs::create_directories(out);
  write_text(out / "metrics.csv", metrics.str());
  write_text(out / "timing.csv", timing.str());
  write_text(out / "bench.json", report.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------- calib

struct CalibArgs {
  Common common;
  std::string corpus, out;
};

json range_json(const HsvRange& r) {
  json bands = json::array();
  for (const auto& b : r.bands()) bands.push_back({{"low", b.low}, {"high", b.high}});
  return bands;
}

int run_calib(const CalibArgs& a) {
  const RunConfig cfg = resolve(a.common);
  const auto entries = fieldsim::read_manifest(a.corpus);
  if (entries.empty()) throw std::runtime_error(a.corpus + ": empty manifest");
  if (entries.front().meta.scene != "field") throw UsageError("calib needs a field corpus");
  hsvadapt::Calibrator calib(cfg.calib, cfg.preprocess.green);
  std::ostringstream log;
  int fallbacks = 0, updates = 0;
  for (const auto& e : entries) {
    const Image rgb = read_pnm((fs::path(a.corpus) / e.image).string());
    const double deviation = (e.meta.pose.heading - std::numbers::pi / 2) * 180.0 / std::numbers::pi;
    const auto entry = calib.observe(e.id, rgb, e.meta.sim_hours * 3600.0, deviation);
    fallbacks += entry.fallback_used;
    updates += entry.updated;
    json j{{"frame", entry.frame},
           {"mean_h", entry.mean_h ? json(*entry.mean_h) : json(nullptr)},
           {"delta", entry.delta},
           {"fallback", entry.fallback_used},
           {"updated", entry.updated},
           {"active", range_json(calib.active())}};
    log << j.dump() << '\n';
  }
  json r = meta(cfg);
  r["frames"] = entries.size();
  r["updates"] = updates;
  r["fallbacks"] = fallbacks;
  r["final_range"] = range_json(calib.active());
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "calib.jsonl", log.str());
  write_text(fs::path(a.out) / "calib.json", r.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------- dock

struct DockArgs {
  Common common;
  std::vector<std::string> in;
  std::string out, report;
};

Image annotate_dock(const Image& rgb, const dockdetect::DockResult& r) {
  Image img = rgb;
  for (const auto& c : r.accepted) {
    draw_circle(img, c.center, c.radius, cli::kGreen);
    draw_cross(img, c.center, cli::kGreen);
  }
  if (r.target) draw_cross(img, *r.target, cli::kBlue, 5);
  return img;
}

int run_dock(const DockArgs& a) {
  const RunConfig cfg = resolve(a.common);
  const int n = static_cast<int>(a.in.size());
  std::vector<dockdetect::DockResult> results(n);
  std::vector<Image> frames(n);
  parallel_for(n, cfg.jobs, [&](int i) {
    frames[i] = read_pnm(a.in[i]);
    if (frames[i].channels() != 3) throw std::runtime_error(a.in[i] + ": expected a colour (P6) image");
    results[i] = dockdetect::def_circle(frames[i], cfg.def_circle);
  });
  std::ostringstream lines;
  json m = meta(cfg);
  m["type"] = "meta";
  lines << m.dump() << '\n';
  for (int i = 0; i < n; ++i) {
    const auto& r = results[i];
    json j;
    j["frame"] = fs::path(a.in[i]).filename().string();
    json circles = json::array();
    for (const auto& c : r.accepted) circles.push_back({c.center.x(), c.center.y(), c.radius, c.ofs});
    j["circles"] = circles;
    j["source"] = dockdetect::to_string(r.source);
    if (r.target) j["target"] = point(r.target);
    else j["directive"] = "straight";
    lines << j.dump() << '\n';
  }
  if (!a.out.empty()) {
    if (n == 1 && fs::path(a.out).has_extension()) {
      write_image(a.out, annotate_dock(frames[0], results[0]));
    } else {
      for (int i = 0; i < n; ++i)
        write_image(fs::path(a.out) / (fs::path(a.in[i]).stem().string() + ".annotated.ppm"),
                    annotate_dock(frames[i], results[i]));
    }
  }
  emit(a.report, lines.str());
  return 0;
}

// ---------------------------------------------------------------- sim

struct SimArgs {
  Common common;
  std::string out, scenario;
  int frames_every = 0;
};

int run_sim(const SimArgs& a) {
  RunConfig cfg = resolve(a.common);
  if (a.scenario == "docking") cfg.sim.scenario = robotsim::Scenario::Docking;
  if (a.scenario == "navigation") cfg.sim.scenario = robotsim::Scenario::Navigation;
  const auto ep = cfg.episode();
  fs::create_directories(a.out);
  robotsim::EpisodeHooks hooks;
  hooks.frame_every = a.frames_every;
  if (a.frames_every > 0)
    hooks.on_frame = [&](const robotsim::FrameDump& d) {
      Image img = *d.image;
      for (const auto& c : d.circles) {
        draw_circle(img, c.center, c.radius, cli::kGreen);
        draw_cross(img, c.center, cli::kGreen);
      }
      if (d.target_px) draw_cross(img, *d.target_px, cli::kGreen, 5);
      char name[64];
      std::snprintf(name, sizeof name, "frame_%06d.ppm", d.tick);
      write_image(fs::path(a.out) / "frames" / name, img);
    };
  spdlog::info("sim seed {} scenario {}", cfg.seed,
               ep.scenario == robotsim::Scenario::Docking ? "docking" : "navigation");
  const auto log = robotsim::run_episode(ep, cfg.seed, hooks);
  json summary = json::parse(robotsim::summary_json(log));
  summary["meta"] = meta(cfg);
  write_text(fs::path(a.out) / "episode.jsonl", robotsim::to_jsonl(log));
  write_text(fs::path(a.out) / "summary.json", summary.dump(2) + "\n");
  spdlog::info("outcome {} coverage {:.2f} collisions {}", robotsim::to_string(log.outcome), log.coverage,
               log.collisions.size());
  return 0;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("rowpilot");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("ROWPILOT_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to "off"; keep the default instead.
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
  }
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"rowpilot: crop-row vision, docking detection and closed-loop simulation"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  PipelineArgs pa;
  auto* pipeline = app.add_subcommand("pipeline", "Contour target on one frame, with an annotated copy");
  add_common(pipeline, pa.common);
  pipeline->add_option("--in", pa.in, "Input PPM")->required()->check(CLI::ExistingFile);
  pipeline->add_option("--out", pa.out, "Annotated PPM");
  pipeline->add_option("--report", pa.report, "JSON report path (default stdout)");
  pipeline->add_option("--detector", pa.detector, "contour, pht, lsd or fpe");

  GenArgs ga;
  auto* gen = app.add_subcommand("gen", "Generate a labelled synthetic corpus");
  add_common(gen, ga.common);
  gen->add_option("--scene", ga.scene, "field or dock")->check(CLI::IsMember({"field", "dock"}));
  gen->add_option("--n", ga.n, "Frame count")->check(CLI::PositiveNumber);
  gen->add_option("--out", ga.out, "Output directory")->required();

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Score detectors on a corpus");
  add_common(bench, ba.common);
  bench->add_option("--corpus", ba.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  bench->add_option("--detectors", ba.detectors, "all or a comma list");
  bench->add_option("--out", ba.out, "Output directory (default: the corpus)");

  CalibArgs ca;
  auto* calib = app.add_subcommand("calib", "Run colour self-calibration over a field corpus");
  add_common(calib, ca.common);
  calib->add_option("--corpus", ca.corpus, "Field corpus directory")->required()->check(CLI::ExistingDirectory);
  calib->add_option("--out", ca.out, "Output directory")->required();

  DockArgs da;
  auto* dock = app.add_subcommand("dock", "Detect the charging-station pattern");
  add_common(dock, da.common);
  dock->add_option("--in", da.in, "Input PPM frames")->required()->check(CLI::ExistingFile);
  dock->add_option("--out", da.out, "Annotated PPM (one frame) or directory");
  dock->add_option("--report", da.report, "JSON-lines path (default stdout)");

  SimArgs sa;
  auto* sim = app.add_subcommand("sim", "Run one closed-loop episode");
  add_common(sim, sa.common);
  sim->add_option("--out", sa.out, "Output directory")->required();
  sim->add_option("--scenario", sa.scenario, "navigation or docking")
      ->check(CLI::IsMember({"navigation", "docking"}));
  sim->add_option("--frames-every", sa.frames_every, "Dump every k-th vision frame")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*pipeline) return run_pipeline(pa);
    if (*gen) return run_gen(ga);
    if (*bench) return run_bench(ba);
    if (*calib) return run_calib(ca);
    if (*dock) return run_dock(da);
    if (*sim) return run_sim(sa);
  } catch (const cli::ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return 1;
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 1;
}
