#pragma once

#include <filesystem>
#include <vector>

#include "healswin/metrics.hpp"
#include "healswin/runconfig.hpp"

namespace healswin::run {

struct Dataset {
  std::vector<synthetic::Sample> samples;
  std::vector<synthetic::RasterSample> rasters;  // only when the config asks for them
  fisheye::CameraCalibration camera;             // valid when rasters present
  bool has_rasters{false};
};

/// Samples are generated per-index from data.seed; identical configs yield
/// identical datasets.
Dataset build_dataset(const DataConfig& data, bool with_rasters);

struct TrainResult {
  std::vector<double> loss_curve;
  metrics::DepthStats depth_stats;       // identity for segmentation
  std::vector<double> class_weights;     // empty for depth
  double final_loss{0.0};
};

/// Trains from scratch and fills the model's parameter store.
TrainResult train_model(model::HealSwin<float>& net, const RunConfig& cfg, const Dataset& data);

/// Checkpoint round-trip with enough metadata to rebuild the model and its
/// evaluation context.
void save_checkpoint(const std::filesystem::path& path, const model::HealSwin<float>& net,
                     const RunConfig& cfg, const TrainResult& result);
struct LoadedModel {
  model::HealSwin<float> net;
  RunConfig cfg;
  metrics::DepthStats depth_stats;
  std::vector<double> class_weights;
};
LoadedModel load_checkpoint(const std::filesystem::path& path);

/// Per-pixel prediction: argmax class map for segmentation, de-standardized
/// depth for regression.
HealpixMap predict_map(const model::HealSwin<float>& net, const synthetic::Sample& sample,
                       Task task, const metrics::DepthStats& stats);

nlohmann::json evaluate(const model::HealSwin<float>& net, const RunConfig& cfg,
                        const Dataset& data, const metrics::DepthStats& stats);

}  // namespace healswin::run
