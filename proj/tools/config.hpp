#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "rowpilot/dockdetect.hpp"
#include "rowpilot/fieldsim.hpp"
#include "rowpilot/hsvadapt.hpp"
#include "rowpilot/robotsim.hpp"
#include "rowpilot/rowdetect.hpp"

namespace rowpilot::cli {

// Bad configuration: unknown key, wrong type, out-of-range value or malformed JSON.
// The message starts with the path of the offending key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RowEndConfig {
  double threshold = 2300.0;  // green pixels at 360x240
  int window = rowdetect::kRowEndWindow;
};

struct BenchConfig {
  double radius = rowdetect::kTargetRadiusPx;
};

struct RunConfig {
  std::uint64_t seed = 1;
  int jobs = 1;
  fieldsim::FieldConfig field;
  fieldsim::DockConfig dock;
  fieldsim::CorpusOptions corpus;
  rowdetect::PreprocessParams preprocess;
  rowdetect::DetectorParams detectors;
  RowEndConfig row_end;
  dockdetect::DefCircleParams def_circle;
  hsvadapt::CalibConfig calib;
  robotsim::EpisodeConfig sim;
  BenchConfig bench;

  // Episode settings with the shared sections folded in.
  robotsim::EpisodeConfig episode() const;
};

// Strict parse: every key must be known, every value of the right type. Missing keys
// keep their defaults. Throws ConfigError.
RunConfig parse_config(const nlohmann::json& j);
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Effective configuration with every default filled in; stable key order.
nlohmann::json to_json(const RunConfig& cfg);
// Settings that can change outputs; the thread count is left out.
nlohmann::json output_json(const RunConfig& cfg);
// Hash of output_json, hex.
std::string config_hash(const RunConfig& cfg);

}  // namespace rowpilot::cli
