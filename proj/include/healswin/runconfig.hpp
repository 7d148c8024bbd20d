#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "healswin/model.hpp"
#include "healswin/synthetic.hpp"

namespace healswin::run {

enum class Task { segmentation, depth };

struct TrainConfig {
  double lr{1e-3};
  int batch{4};
  int steps{200};
  std::uint64_t seed{0};
  Task task{Task::segmentation};
  double weight_decay{0.0};
  int log_every{25};
};

struct DataConfig {
  std::uint64_t seed{1};
  std::int64_t nside{16};
  int num_objects{4};
  int count{4};
  int raster_width{0};   // nonzero enables the raster/flat evaluation path
  int raster_height{0};
};

struct RunConfig {
  model::ModelConfig model;
  TrainConfig train;
  DataConfig data;
  std::filesystem::path out_dir;
  std::vector<int> exclude_classes{synthetic::kVoid};  // dropped from the mIoU mean
};

/// Parses and validates; error messages carry the JSON pointer of the bad
/// field ("/train/lr: expected number").
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_json(const RunConfig& cfg);

}  // namespace healswin::run
