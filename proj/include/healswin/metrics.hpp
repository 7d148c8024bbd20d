#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <vector>

#include "healswin/fisheye.hpp"

namespace healswin::metrics {

/// w_i = n_i^(-1/4) from class prevalence counts; absent classes get 0.
std::vector<double> class_weights(const std::vector<std::int64_t>& counts);

/// Mean over valid pixels of w_label * (-log softmax(logits)[label]).
/// logits: row-major (n, C). Reference value for the training-path loss.
double weighted_cross_entropy(const std::vector<float>& logits, std::int64_t n, int num_classes,
                              const std::vector<std::int32_t>& labels,
                              const std::vector<double>& weights,
                              const std::vector<std::uint8_t>& valid);

struct DepthStats {
  double mean{0.0};
  double std{1.0};
};
DepthStats compute_depth_stats(const std::vector<const HealpixMap*>& depth_maps,
                               const std::vector<const std::vector<std::uint8_t>*>& sky_masks);

/// Mean squared error in standardized units over valid, non-sky pixels.
double depth_l2_loss(const std::vector<float>& pred, const std::vector<float>& gt,
                     const std::vector<std::uint8_t>& sky_mask,
                     const std::vector<std::uint8_t>& valid, const DepthStats& stats);

struct IouReport {
  std::vector<double> per_class;     // NaN for classes skipped
  std::vector<std::int64_t> skipped; // absent from both prediction and truth
  double miou{0.0};
};

/// IoU per class over valid elements; mean over classes not excluded and not
/// absent from both sides.
IouReport intersection_over_union(const std::vector<std::int32_t>& pred,
                                  const std::vector<std::int32_t>& gt,
                                  const std::vector<std::uint8_t>& valid, int num_classes,
                                  const std::set<int>& exclude);

IouReport spherical_miou(const HealpixMap& pred_labels, const HealpixMap& gt_labels,
                         const std::set<int>& exclude, int num_classes);

IouReport flat_miou(const ImageRaster& pred, const ImageRaster& gt,
                    const std::vector<std::uint8_t>& coverage, int num_classes,
                    const std::set<int>& exclude);

struct PointCloud {
  std::vector<std::array<double, 3>> points;
};

struct LiftResult {
  PointCloud cloud;
  std::int64_t clamped_negative{0};  // depths clamped to zero before lifting
};

/// point = depth * (sin t cos p, sin t sin p, cos t) per valid element;
/// HEALPix angles come from the pixel centres.
LiftResult depth_to_pointcloud(const HealpixMap& depth, const std::vector<std::uint8_t>& valid);

/// Raster variant; angles from calibration back-projection. Pixels whose
/// back-projection fails are skipped.
LiftResult depth_to_pointcloud(const ImageRaster& depth, const fisheye::CameraCalibration& cal,
                               const std::vector<std::uint8_t>& valid);

/// Symmetric mean of squared nearest-neighbour distances, accelerated by a
/// uniform spatial hash grid. Exact: every query verifies true distances.
double chamfer(const PointCloud& a, const PointCloud& b);

}  // namespace healswin::metrics
