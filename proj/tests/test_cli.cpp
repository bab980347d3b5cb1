#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "config.hpp"

using namespace rowpilot;
using namespace rowpilot::cli;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rowpilot_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args) {
  const std::string cmd = std::string(ROWPILOT_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST(Config, EmptyObjectGivesDefaults) {
  const RunConfig c = parse_config_text("{}");
  EXPECT_EQ(c.seed, 1u);
  EXPECT_DOUBLE_EQ(c.row_end.threshold, 2300.0);
  EXPECT_DOUBLE_EQ(c.field.camera.hfov_deg, 136.0);
  EXPECT_EQ(c.field.aisles, 6);
  EXPECT_EQ(c.def_circle.red, HsvRange::red_sun());
}

TEST(Config, UnknownKeysNamePath) {
  EXPECT_EQ(error_of(R"({"bogus": 1})"), "$.bogus: unknown key");
  EXPECT_EQ(error_of(R"({"field": {"camera": {"fov": 90}}})"), "$.field.camera.fov: unknown key");
  EXPECT_EQ(error_of(R"({"preprocess": {"green": [{"low": [0,0,0], "hi": [1,1,1]}]}})"),
            "$.preprocess.green[0].hi: unknown key");
}

TEST(Config, TypeAndRangeErrors) {
  EXPECT_EQ(error_of(R"({"field": {"aisles": 2.5}})"), "$.field.aisles: expected an integer");
  EXPECT_EQ(error_of(R"({"seed": -3})"), "$.seed: expected a non-negative integer");
  EXPECT_EQ(error_of(R"({"jobs": 0})"), "$.jobs: must be at least 1");
  EXPECT_EQ(error_of(R"({"dock": {"glare": "yes"}})"), "$.dock.glare: expected true or false");
  EXPECT_NE(error_of(R"({"sim": {"scenario": "flying"}})").find("$.sim.scenario: unknown value"), std::string::npos);
  EXPECT_EQ(error_of(R"({"preprocess": {"blur_ksize": 4}})"), "$.preprocess.blur_ksize: must be odd");
  EXPECT_EQ(error_of(R"({"field": 3})"), "$.field: expected an object");
}

TEST(Config, MalformedJsonReportsLineAndColumn) {
  const std::string e = error_of("{\n  \"seed\": 1,\n  \"jobs\": ,\n}");
  EXPECT_NE(e.find("line 3, column 11"), std::string::npos) << e;
}

TEST(Config, OverrideEchoedAndHashed) {
  const RunConfig base = parse_config_text("{}");
  const RunConfig c = parse_config_text(R"({"row_end": {"threshold": 2500}, "def_circle": {"red": "red_trial"}})");
  EXPECT_DOUBLE_EQ(to_json(c)["row_end"]["threshold"].get<double>(), 2500.0);
  EXPECT_NE(config_hash(c), config_hash(base));
  EXPECT_NEAR(c.episode().mission.row_end_fraction * 86400.0, 2500.0, 1e-9);
}

TEST(Config, EffectiveConfigRoundTrips) {
  const RunConfig c = parse_config_text(R"({"seed": 9, "sim": {"imu_drift": true, "dock_offset": 0.2}})");
  const RunConfig again = parse_config(to_json(c));
  EXPECT_EQ(to_json(again), to_json(c));
  EXPECT_EQ(config_hash(again), config_hash(c));
  EXPECT_TRUE(again.sim.imu.bump_drift);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("exit");
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("--help"), 0);
  write(dir / "bad.json", R"({"field": {"aisle_widht": 0.2}})");
  EXPECT_EQ(run("gen --config " + (dir / "bad.json").string() + " --out " + (dir / "out").string()), 1);
  EXPECT_FALSE(fs::exists(dir / "out"));
  write(dir / "broken.ppm", "P6\n10 10\n255\nxx");
  EXPECT_EQ(run("pipeline --in " + (dir / "broken.ppm").string()), 2);
  EXPECT_EQ(run("pipeline --in " + (dir / "missing.ppm").string()), 1);
}

TEST(Cli, SubcommandsRerunByteIdentical) {
  const fs::path dir = scratch("det");
  const std::string d = dir.string();
  ASSERT_EQ(run("gen --scene field --n 4 --seed 5 --out " + d + "/f1"), 0);
  ASSERT_EQ(run("gen --scene field --n 4 --seed 5 --jobs 2 --out " + d + "/f2"), 0);
  ASSERT_EQ(run("gen --scene dock --n 3 --seed 5 --out " + d + "/d1"), 0);
  for (const auto& e : fs::directory_iterator(d + "/f1"))
    EXPECT_EQ(slurp(e.path()), slurp(d + "/f2/" + e.path().filename().string())) << e.path();

  for (int k = 0; k < 2; ++k) {
    const std::string o = d + "/run" + std::to_string(k);
    ASSERT_EQ(run("bench --corpus " + d + "/f1 --out " + o + "/bench"), 0);
    ASSERT_EQ(run("calib --corpus " + d + "/f1 --out " + o + "/calib"), 0);
    ASSERT_EQ(run("dock --in " + d + "/d1/frame_000.ppm --out " + o + "/dock.ppm --report " + o + "/dock.jsonl"), 0);
    ASSERT_EQ(run("pipeline --in " + d + "/f1/frame_001.ppm --out " + o + "/pipe.ppm --report " + o + "/pipe.json"),
              0);
    ASSERT_EQ(run("sim --scenario docking --seed 3 --out " + o + "/sim"), 0);
  }
  for (const char* f : {"bench/metrics.csv", "bench/bench.json", "calib/calib.jsonl", "calib/calib.json",
                        "dock.ppm", "dock.jsonl", "pipe.ppm", "pipe.json", "sim/episode.jsonl", "sim/summary.json"}) {
    const std::string a = slurp(d + "/run0/" + f), b = slurp(d + "/run1/" + f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, b) << f;
  }
  EXPECT_NE(slurp(d + "/run0/pipe.json").find("\"config_hash\""), std::string::npos);
}
