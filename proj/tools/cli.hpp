#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mpcn/trainer.hpp"

namespace mpcn::cli {

/// Everything a run needs: episode hyperparameters, model preset and the
/// dataset manifest. Loaded from JSON, then overridden by flags.
struct RunConfig {
  std::string preset = "desk";
  std::string data;  // manifest path
  EpisodeConfig episode;

  void validate() const;
};

/// Strict: unknown keys are a ConfigError.
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);
std::string config_json(const RunConfig& cfg);
RunConfig config_from_json(const std::string& text);

/// Output root: $MPCN_RUN_DIR, else ./runs.
std::filesystem::path run_root();

struct PlotPoint {
  std::string method;
  int shots = 0;
  double mean_iou = 0;
  int reports = 0;
};

/// Reads reports and averages mean_iou per (method, shots). Missing fields
/// are collected into one error listing every offending file.
std::vector<PlotPoint> collect_shot_points(const std::vector<std::string>& reports);
void write_shot_plot(const std::vector<PlotPoint>& points, const std::filesystem::path& svg,
                     const std::filesystem::path& csv);

/// Entry point shared by the executable and tests. args excludes argv[0].
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mpcn::cli
