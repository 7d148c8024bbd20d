#include "healswin/train.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "healswin/serialize.hpp"

namespace healswin::run {

namespace {

std::uint64_t sample_seed(std::uint64_t base, int index) {
  return base + 0x100000001b3ULL * static_cast<std::uint64_t>(index);
}

synthetic::SceneSpec scene_spec_for(const DataConfig& data, int index,
                                    const fisheye::CameraCalibration& cam) {
  synthetic::SceneSpec spec;
  spec.seed = sample_seed(data.seed, index);
  spec.nside = data.nside;
  spec.num_objects = data.num_objects;
  spec.camera = cam;
  return spec;
}

struct SegTargets {
  std::vector<std::int32_t> labels;
  std::vector<float> row_weight;  // 0 for invalid pixels
  float inv_valid{0.f};
};

SegTargets seg_targets(const synthetic::Sample& s, const std::vector<double>& weights) {
  const std::int64_t n = s.labels.num_pixels();
  SegTargets t;
  t.labels.resize(static_cast<std::size_t>(n));
  t.row_weight.assign(static_cast<std::size_t>(n), 0.f);
  std::int64_t valid = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto lab = static_cast<std::int32_t>(std::lround(s.labels.at(i, 0)));
    t.labels[i] = lab;
    if (!s.labels.valid(i) || !s.image.valid(i)) {
      t.labels[i] = -1;
      continue;
    }
    t.row_weight[i] = static_cast<float>(weights[lab]);
    ++valid;
  }
  t.inv_valid = valid > 0 ? 1.0f / static_cast<float>(valid) : 0.f;
  return t;
}

struct DepthTargets {
  std::vector<float> standardized;  // (n) target values
  std::vector<float> mask;          // 1 on valid non-sky pixels
  float inv_valid{0.f};
};

DepthTargets depth_targets(const synthetic::Sample& s, const metrics::DepthStats& stats) {
  const std::int64_t n = s.depth.num_pixels();
  DepthTargets t;
  t.standardized.assign(static_cast<std::size_t>(n), 0.f);
  t.mask.assign(static_cast<std::size_t>(n), 0.f);
  std::int64_t valid = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (!s.depth.valid(i) || s.sky_mask[i] || !s.image.valid(i)) continue;
    t.standardized[i] =
        static_cast<float>((s.depth.at(i, 0) - stats.mean) / stats.std);
    t.mask[i] = 1.f;
    ++valid;
  }
  t.inv_valid = valid > 0 ? 1.0f / static_cast<float>(valid) : 0.f;
  return t;
}

std::vector<std::int64_t> class_counts(const std::vector<synthetic::Sample>& samples,
                                       int num_classes) {
  std::vector<std::int64_t> counts(num_classes, 0);
  for (const auto& s : samples)
    for (std::int64_t i = 0; i < s.labels.num_pixels(); ++i) {
      if (!s.labels.valid(i)) continue;
      const auto lab = static_cast<std::int32_t>(std::lround(s.labels.at(i, 0)));
      if (lab >= 0 && lab < num_classes) ++counts[lab];
    }
  return counts;
}

}  // namespace

Dataset build_dataset(const DataConfig& data, bool with_rasters) {
  Dataset out;
  out.has_rasters = with_rasters && data.raster_width >= 2 && data.raster_height >= 2;
  out.camera = out.has_rasters
                   ? fisheye::default_camera(data.raster_width, data.raster_height)
                   : fisheye::default_camera(4 * static_cast<int>(data.nside),
                                             4 * static_cast<int>(data.nside));
  out.samples.reserve(static_cast<std::size_t>(data.count));
  for (int i = 0; i < data.count; ++i) {
    const auto spec = scene_spec_for(data, i, out.camera);
    out.samples.push_back(synthetic::generate(spec));
    if (out.has_rasters) out.rasters.push_back(synthetic::render_fisheye(spec));
  }
  return out;
}

TrainResult train_model(model::HealSwin<float>& net, const RunConfig& cfg, const Dataset& data) {
  using Tape = ad::Tape<float>;
  const int count = static_cast<int>(data.samples.size());
  if (count == 0) throw std::invalid_argument("train: empty dataset");

  TrainResult result;
  std::vector<SegTargets> seg;
  std::vector<DepthTargets> dep;
  if (cfg.train.task == Task::segmentation) {
    const auto counts = class_counts(data.samples, cfg.model.out_channels);
    result.class_weights = metrics::class_weights(counts);
    for (const auto& s : data.samples) seg.push_back(seg_targets(s, result.class_weights));
  } else {
    std::vector<const HealpixMap*> maps;
    std::vector<const std::vector<std::uint8_t>*> skies;
    for (const auto& s : data.samples) {
      maps.push_back(&s.depth);
      skies.push_back(&s.sky_mask);
    }
    result.depth_stats = metrics::compute_depth_stats(maps, skies);
    for (const auto& s : data.samples) dep.push_back(depth_targets(s, result.depth_stats));
  }

  ad::AdamConfig adam;
  adam.lr = cfg.train.lr;
  adam.weight_decay = cfg.train.weight_decay;

  auto& store = net.params();
  std::vector<std::vector<float>> grads(static_cast<std::size_t>(store.size()));

  for (int step = 0; step < cfg.train.steps; ++step) {
    Tape tape;
    const auto pvars = net.register_params(tape);
    Tape::Var total{};
    for (int j = 0; j < cfg.train.batch; ++j) {
      const int idx = (step * cfg.train.batch + j) % count;
      const auto& sample = data.samples[idx];
      Tape::Var logits = net.build(tape, sample.image, pvars);
      Tape::Var loss{};
      if (cfg.train.task == Task::segmentation) {
        loss = tape.cross_entropy_rows(logits, seg[idx].labels, seg[idx].row_weight,
                                       seg[idx].inv_valid);
      } else {
        const std::int64_t n = sample.depth.num_pixels();
        auto target = ad::Array<float>::zeros({n, 1});
        auto mask = ad::Array<float>::zeros({n, 1});
        for (std::int64_t i = 0; i < n; ++i) {
          target.v[i] = -dep[idx].standardized[i];
          mask.v[i] = dep[idx].mask[i];
        }
        Tape::Var diff = tape.add(logits, tape.constant(std::move(target)));
        Tape::Var sq = tape.mul(diff, diff);
        sq = tape.mul(sq, tape.constant(std::move(mask)));
        loss = tape.scale(tape.sum_all(sq), dep[idx].inv_valid);
      }
      total = j == 0 ? loss : tape.add(total, loss);
    }
    Tape::Var loss = tape.scale(total, 1.0f / static_cast<float>(cfg.train.batch));
    tape.backward(loss);
    for (std::int64_t i = 0; i < store.size(); ++i) grads[i] = tape.grad(pvars[i]);
    store.adamw_step(grads, adam);
    result.loss_curve.push_back(static_cast<double>(tape.value(loss)[0]));
  }
  result.final_loss = result.loss_curve.empty() ? 0.0 : result.loss_curve.back();
  return result;
}

void save_checkpoint(const std::filesystem::path& path, const model::HealSwin<float>& net,
                     const RunConfig& cfg, const TrainResult& result) {
  nlohmann::json meta = run_config_json(cfg);
  meta["depth_stats"] = {{"mean", result.depth_stats.mean}, {"std", result.depth_stats.std}};
  meta["class_weights"] = result.class_weights;
  io::write_checkpoint(path, net.params(), meta);
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
  auto file = io::read_checkpoint(path);
  RunConfig cfg = parse_run_config(file.meta);
  model::HealSwin<float> net(cfg.model, cfg.train.seed);
  auto& store = net.params();
  if (store.size() != static_cast<std::int64_t>(file.tensors.size()))
    throw std::runtime_error(path.string() + ": checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < file.tensors.size(); ++i) {
    auto& e = store.entry(static_cast<std::int64_t>(i));
    if (e.name != file.names[i] || e.value.shape != file.tensors[i].shape)
      throw std::runtime_error(path.string() + ": checkpoint manifest mismatch at " +
                               file.names[i]);
    e.value = std::move(file.tensors[i]);
  }
  LoadedModel out{std::move(net), cfg, {}, {}};
  if (file.meta.contains("depth_stats")) {
    out.depth_stats.mean = file.meta["depth_stats"].value("mean", 0.0);
    out.depth_stats.std = file.meta["depth_stats"].value("std", 1.0);
  }
  if (file.meta.contains("class_weights"))
    out.class_weights = file.meta["class_weights"].get<std::vector<double>>();
  return out;
}

HealpixMap predict_map(const model::HealSwin<float>& net, const synthetic::Sample& sample,
                       Task task, const metrics::DepthStats& stats) {
  const HealpixMap logits = net.forward(sample.image);
  HealpixMap out = HealpixMap::zeros(logits.nside, logits.num_faces, 1);
  out.validity = logits.validity;
  const std::int64_t n = logits.num_pixels();
  if (task == Task::segmentation) {
    for (std::int64_t i = 0; i < n; ++i) {
      int best = 0;
      for (int c = 1; c < logits.channels; ++c)
        if (logits.at(i, c) > logits.at(i, best)) best = c;
      out.at(i, 0) = static_cast<float>(best);
    }
  } else {
    for (std::int64_t i = 0; i < n; ++i)
      out.at(i, 0) = static_cast<float>(logits.at(i, 0) * stats.std + stats.mean);
  }
  return out;
}

nlohmann::json evaluate(const model::HealSwin<float>& net, const RunConfig& cfg,
                        const Dataset& data, const metrics::DepthStats& stats) {
  nlohmann::json out;
  const std::set<int> exclude(cfg.exclude_classes.begin(), cfg.exclude_classes.end());
  const int C = cfg.model.out_channels;

  if (cfg.train.task == Task::segmentation) {
    std::vector<std::int32_t> all_pred, all_gt;
    std::vector<std::uint8_t> all_valid;
    std::vector<std::int32_t> flat_pred, flat_gt;
    std::vector<std::uint8_t> flat_cov;
    std::int64_t correct = 0, total = 0;

    for (std::size_t k = 0; k < data.samples.size(); ++k) {
      const auto& s = data.samples[k];
      const HealpixMap pred = predict_map(net, s, Task::segmentation, stats);
      for (std::int64_t i = 0; i < pred.num_pixels(); ++i) {
        const auto pl = static_cast<std::int32_t>(pred.at(i, 0));
        const auto gl = static_cast<std::int32_t>(std::lround(s.labels.at(i, 0)));
        const bool v = pred.valid(i) && s.labels.valid(i);
        all_pred.push_back(pl);
        all_gt.push_back(gl);
        all_valid.push_back(v);
        if (v) {
          ++total;
          if (pl == gl) ++correct;
        }
      }
      if (data.has_rasters) {
        const auto rr =
            fisheye::resample_to_raster(pred, data.camera, data.rasters[k].image.width,
                                        data.rasters[k].image.height);
        const auto& gt = data.rasters[k];
        for (std::int64_t i = 0;
             i < static_cast<std::int64_t>(gt.labels.data.size()); ++i) {
          flat_pred.push_back(static_cast<std::int32_t>(rr.raster.data[i]));
          flat_gt.push_back(static_cast<std::int32_t>(std::lround(gt.labels.data[i])));
          flat_cov.push_back(rr.covered[i] && gt.covered[i]);
        }
      }
    }
    const auto rep = metrics::intersection_over_union(all_pred, all_gt, all_valid, C, exclude);
    out["spherical_miou"] = rep.miou;
    nlohmann::json per = nlohmann::json::array();
    for (const double v : rep.per_class)
      per.push_back(std::isnan(v) ? nlohmann::json() : nlohmann::json(v));
    out["per_class_iou"] = per;
    out["skipped_classes"] = rep.skipped;
    out["pixel_accuracy"] = total > 0 ? static_cast<double>(correct) / total : 0.0;
    if (data.has_rasters) {
      const auto flat = metrics::intersection_over_union(flat_pred, flat_gt, flat_cov, C, exclude);
      out["flat_miou"] = flat.miou;
    }
  } else {
    double chamfer_sum = 0.0, mse_sum = 0.0;
    std::int64_t clamped = 0;
    nlohmann::json per_sample = nlohmann::json::array();
    for (const auto& s : data.samples) {
      const HealpixMap pred = predict_map(net, s, Task::depth, stats);
      std::vector<std::uint8_t> lift_valid(static_cast<std::size_t>(pred.num_pixels()), 1);
      for (std::int64_t i = 0; i < pred.num_pixels(); ++i)
        lift_valid[i] = !s.sky_mask[i] && s.depth.valid(i) && pred.valid(i);
      auto pc_pred = metrics::depth_to_pointcloud(pred, lift_valid);
      auto pc_gt = metrics::depth_to_pointcloud(s.depth, lift_valid);
      const double cd = metrics::chamfer(pc_pred.cloud, pc_gt.cloud);
      clamped += pc_pred.clamped_negative;
      chamfer_sum += cd;
      per_sample.push_back(cd);
      mse_sum += metrics::depth_l2_loss(pred.data, s.depth.data, s.sky_mask,
                                        s.depth.validity, stats);
    }
    const auto n = static_cast<double>(data.samples.size());
    out["chamfer"] = chamfer_sum / n;
    out["chamfer_per_sample"] = per_sample;
    out["standardized_mse"] = mse_sum / n;
    out["clamped_negative_depths"] = clamped;
  }
  return out;
}

}  // namespace healswin::run
