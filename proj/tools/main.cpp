#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "healswin/grid_plan.hpp"
#include "healswin/model.hpp"
#include "healswin/plot.hpp"
#include "healswin/serialize.hpp"
#include "healswin/train.hpp"

namespace fs = std::filesystem;
using namespace healswin;

namespace {

// Files registered here are deleted if the command throws, so failures do
// not leave partial outputs behind.
struct OutputGuard {
  std::vector<fs::path> paths;
  bool commit{false};
  fs::path track(fs::path p) {
    paths.push_back(p);
    return p;
  }
  ~OutputGuard() {
    if (commit) return;
    for (const auto& p : paths) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }
};

fisheye::CameraCalibration load_calibration(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open calibration " + path.string());
  nlohmann::json j;
  f >> j;
  fisheye::CameraCalibration cal;
  const auto poly = j.at("poly").get<std::vector<double>>();
  if (poly.size() != 4) throw std::invalid_argument("/poly: expected 4 coefficients");
  for (int i = 0; i < 4; ++i) cal.poly[i] = poly[i];
  cal.cx = j.at("cx").get<double>();
  cal.cy = j.at("cy").get<double>();
  cal.aspect = j.value("aspect", 1.0);
  cal.width = j.at("width").get<int>();
  cal.height = j.at("height").get<int>();
  return cal;
}

int cmd_grid_info(std::int64_t nside, std::int64_t patch, std::int64_t window, int faces,
                  int stages) {
  const hp::NSide ns(nside);
  std::printf("npix %lld\n", static_cast<long long>(hp::npix(ns)));
  std::printf("subset %lld\n", static_cast<long long>(plan::subset_base8(ns).second));
  if (patch > 0 && window > 0) {
    model::ModelConfig cfg;
    cfg.nside = nside;
    cfg.num_faces = faces;
    cfg.patch_size = patch;
    cfg.window_size = window;
    cfg.depths.assign(static_cast<std::size_t>(stages), 2);
    cfg.dims.assign(static_cast<std::size_t>(stages), 8);
    cfg.heads.assign(static_cast<std::size_t>(stages), 2);
    std::printf("%-10s %10s %10s %18s %8s  %s\n", "layer", "tokens", "windows",
                "windows_per_base", "nside", "followed_by");
    for (const auto& li : model::layer_chain(cfg))
      std::printf("%-10s %10lld %10lld %18lld %8lld  %s\n", li.name.c_str(),
                  static_cast<long long>(li.tokens), static_cast<long long>(li.windows),
                  static_cast<long long>(li.windows_per_base),
                  static_cast<long long>(li.nside), li.followed_by.c_str());
  }
  return 0;
}

int cmd_make_plan(std::int64_t nside, std::int64_t patch, int faces, const std::string& strategy,
                  std::int64_t shift, std::int64_t window, const fs::path& out) {
  const auto grid = plan::build_patches(hp::NSide(nside), patch, faces);
  const auto strat =
      strategy == "grid" ? plan::ShiftStrategy::grid : plan::ShiftStrategy::spiral;
  const auto p = strat == plan::ShiftStrategy::spiral ? plan::spiral_shift_plan(grid, shift)
                                                      : plan::grid_shift_plan(grid, shift);
  if (window > 0) plan::partition_windows(grid, window);  // validates tiling
  OutputGuard guard;
  io::write_plan(guard.track(out), p, window);
  guard.commit = true;
  std::printf("plan %s: %lld patches, shift %lld, %s\n", out.string().c_str(),
              static_cast<long long>(grid.length()), static_cast<long long>(shift),
              strategy.c_str());
  return 0;
}

int cmd_gen_data(std::uint64_t seed, int count, std::int64_t nside, int objects, bool raster,
                 int width, int height, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  run::DataConfig data;
  data.seed = seed;
  data.nside = nside;
  data.num_objects = objects;
  data.count = count;
  data.raster_width = raster ? width : 0;
  data.raster_height = raster ? height : 0;
  const auto ds = run::build_dataset(data, raster);

  OutputGuard guard;
  char name[64];
  for (int i = 0; i < count; ++i) {
    const auto& s = ds.samples[i];
    std::snprintf(name, sizeof(name), "sample_%05d", i);
    const fs::path base = out_dir / name;
    io::write_map(guard.track(base.string() + ".image.hswm"), s.image);
    io::write_map(guard.track(base.string() + ".labels.hswm"), s.labels);
    io::write_map(guard.track(base.string() + ".depth.hswm"), s.depth);
    if (raster) {
      const auto& r = ds.rasters[i];
      io::write_raster(guard.track(base.string() + ".image.raster.hswm"), r.image, r.covered);
      io::write_raster(guard.track(base.string() + ".labels.raster.hswm"), r.labels, r.covered);
      io::write_raster(guard.track(base.string() + ".depth.raster.hswm"), r.depth, r.covered);
    }
  }
  guard.commit = true;
  std::printf("wrote %d sample%s to %s\n", count, count == 1 ? "" : "s",
              out_dir.string().c_str());
  return 0;
}

int cmd_resample(const fs::path& calib, const fs::path& in, const fs::path& out,
                 const std::string& interp, std::int64_t nside, int width, int height) {
  const auto cal = load_calibration(calib);
  const auto c = io::read_container(in);
  const std::string kind = c.header.value("kind", "");
  OutputGuard guard;
  if (kind == "raster") {
    if (nside <= 0) throw std::invalid_argument("resample to map: --nside required");
    const auto rf = io::read_raster(in);
    const auto interp_mode =
        interp == "nearest" ? fisheye::Interp::nearest : fisheye::Interp::bilinear;
    io::write_map(guard.track(out),
                  fisheye::resample_to_healpix(rf.raster, cal, hp::NSide(nside), interp_mode));
  } else if (kind == "map") {
    const auto map = io::read_map(in);
    const int w = width > 0 ? width : cal.width;
    const int h = height > 0 ? height : cal.height;
    if (interp != "nearest")
      throw std::invalid_argument("resample to raster supports only nearest interpolation");
    const auto rr = fisheye::resample_to_raster(map, cal, w, h);
    io::write_raster(guard.track(out), rr.raster, rr.covered);
  } else {
    throw std::runtime_error(in.string() + ": expected a map or raster container");
  }
  guard.commit = true;
  std::printf("resampled %s -> %s\n", in.string().c_str(), out.string().c_str());
  return 0;
}

int cmd_train(const fs::path& config_path, const std::string& out_dir_override) {
  run::RunConfig cfg = run::load_run_config(config_path);
  if (!out_dir_override.empty()) cfg.out_dir = out_dir_override;
  if (cfg.out_dir.empty()) throw std::invalid_argument("/io/out_dir: required for train");
  fs::create_directories(cfg.out_dir);

  const auto data = run::build_dataset(cfg.data, false);
  model::HealSwin<float> net(cfg.model, cfg.train.seed);
  const auto result = run::train_model(net, cfg, data);

  OutputGuard guard;
  save_checkpoint(guard.track(cfg.out_dir / "checkpoint.hswm"), net, cfg, result);
  nlohmann::json curve;
  curve["task"] = cfg.train.task == run::Task::segmentation ? "segmentation" : "depth";
  curve["loss"] = result.loss_curve;
  io::write_text(guard.track(cfg.out_dir / "loss_curve.json"), curve.dump(2) + "\n");
  io::write_text(guard.track(cfg.out_dir / "layer_trace.json"),
                 model::layer_chain_json(cfg.model) + "\n");
  guard.commit = true;
  std::printf("trained %d steps, final loss %.6f, checkpoint %s\n", cfg.train.steps,
              result.final_loss, (cfg.out_dir / "checkpoint.hswm").string().c_str());
  return 0;
}

int cmd_eval(const fs::path& config_path, const fs::path& ckpt, const std::string& out_path) {
  run::RunConfig cfg = run::load_run_config(config_path);
  auto loaded = run::load_checkpoint(ckpt);
  // data/eval sections come from the given config; the model comes from the
  // checkpoint
  loaded.cfg.data = cfg.data;
  loaded.cfg.exclude_classes = cfg.exclude_classes;
  if (!cfg.out_dir.empty()) loaded.cfg.out_dir = cfg.out_dir;

  const auto data = run::build_dataset(loaded.cfg.data, loaded.cfg.data.raster_width > 0);
  auto metrics = run::evaluate(loaded.net, loaded.cfg, data, loaded.depth_stats);

  fs::path out = out_path.empty() ? loaded.cfg.out_dir / "metrics.json" : fs::path(out_path);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  OutputGuard guard;
  io::write_text(guard.track(out), metrics.dump(2) + "\n");
  guard.commit = true;
  std::printf("%s\n", metrics.dump().c_str());
  return 0;
}

int cmd_predict(const fs::path& config_path, const fs::path& ckpt, const fs::path& out_dir) {
  run::RunConfig cfg = run::load_run_config(config_path);
  auto loaded = run::load_checkpoint(ckpt);
  loaded.cfg.data = cfg.data;
  fs::create_directories(out_dir);
  const auto data = run::build_dataset(loaded.cfg.data, false);

  OutputGuard guard;
  char name[64];
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto pred = run::predict_map(loaded.net, data.samples[i], loaded.cfg.train.task,
                                       loaded.depth_stats);
    std::snprintf(name, sizeof(name), "pred_%05zu.hswm", i);
    io::write_map(guard.track(out_dir / name), pred);
  }
  guard.commit = true;
  std::printf("wrote %zu prediction map%s to %s\n", data.samples.size(),
              data.samples.size() == 1 ? "" : "s", out_dir.string().c_str());
  return 0;
}

int cmd_plot(const fs::path& in, const fs::path& out, const std::string& view,
             const std::string& calib, int width, int height) {
  const auto map = io::read_map(in);
  OutputGuard guard;
  if (view == "fisheye") {
    fisheye::CameraCalibration cal;
    if (!calib.empty()) {
      cal = load_calibration(calib);
    } else {
      const int w = width > 0 ? width : 4 * static_cast<int>(map.nside);
      const int h = height > 0 ? height : 4 * static_cast<int>(map.nside);
      cal = fisheye::default_camera(w, h);
    }
    io::write_ppm(guard.track(out),
                  io::fisheye_view(map, cal, width > 0 ? width : cal.width,
                                   height > 0 ? height : cal.height));
  } else {
    io::write_ppm(guard.track(out), io::montage_faces(map));
  }
  guard.commit = true;
  std::printf("plotted %s -> %s\n", in.string().c_str(), out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HEALPix windowed-attention toolkit"};
  app.require_subcommand(1);

  // grid-info
  std::int64_t gi_nside = 256, gi_patch = 0, gi_window = 0;
  int gi_faces = 8, gi_stages = 4;
  auto* gi = app.add_subcommand("grid-info", "grid sizes and the per-layer chain");
  gi->add_option("--nside", gi_nside, "grid nside")->required();
  gi->add_option("--patch", gi_patch, "patch size (pixels per patch)");
  gi->add_option("--window", gi_window, "window size (patches per window)");
  gi->add_option("--faces", gi_faces, "base pixels used (8 or 12)");
  gi->add_option("--stages", gi_stages, "encoder stage count");

  // make-plan
  std::int64_t mp_nside = 16, mp_patch = 1, mp_shift = 4, mp_window = 0;
  int mp_faces = 8;
  std::string mp_strategy = "spiral", mp_out;
  auto* mp = app.add_subcommand("make-plan", "write a shift-plan sidecar");
  mp->add_option("--nside", mp_nside, "pixel-grid nside")->required();
  mp->add_option("--patch", mp_patch, "pixels per patch");
  mp->add_option("--faces", mp_faces, "base pixels used");
  mp->add_option("--strategy", mp_strategy, "spiral or grid")
      ->check(CLI::IsMember({"spiral", "grid"}));
  mp->add_option("--shift", mp_shift, "shift amount");
  mp->add_option("--window", mp_window, "window size recorded for masking");
  mp->add_option("--out", mp_out, "output path")->required();

  // gen-data
  std::uint64_t gd_seed = 0;
  int gd_count = 4, gd_objects = 4, gd_width = 128, gd_height = 96;
  std::int64_t gd_nside = 16;
  bool gd_raster = false;
  std::string gd_out;
  auto* gd = app.add_subcommand("gen-data", "generate synthetic samples");
  gd->add_option("--seed", gd_seed, "dataset seed");
  gd->add_option("--count", gd_count, "number of samples");
  gd->add_option("--nside", gd_nside, "map nside")->required();
  gd->add_option("--objects", gd_objects, "objects per scene");
  gd->add_flag("--raster", gd_raster, "also write fisheye rasters");
  gd->add_option("--width", gd_width, "raster width");
  gd->add_option("--height", gd_height, "raster height");
  gd->add_option("--out", gd_out, "output directory")->required();

  // resample
  std::string rs_calib, rs_in, rs_out, rs_interp = "bilinear";
  std::int64_t rs_nside = 0;
  int rs_width = 0, rs_height = 0;
  auto* rs = app.add_subcommand("resample", "project between rasters and maps");
  rs->add_option("--calib", rs_calib, "calibration JSON")->required();
  rs->add_option("--in", rs_in, "input container")->required();
  rs->add_option("--out", rs_out, "output container")->required();
  rs->add_option("--interp", rs_interp, "bilinear or nearest")
      ->check(CLI::IsMember({"bilinear", "nearest"}));
  rs->add_option("--nside", rs_nside, "target nside (raster -> map)");
  rs->add_option("--width", rs_width, "target width (map -> raster)");
  rs->add_option("--height", rs_height, "target height (map -> raster)");

  // train / eval / predict
  std::string tr_config, tr_out;
  auto* tr = app.add_subcommand("train", "train from a run config");
  tr->add_option("--config", tr_config, "run config JSON")->required();
  tr->add_option("--out-dir", tr_out, "override io.out_dir");

  std::string ev_config, ev_ckpt, ev_out;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--config", ev_config, "run config JSON")->required();
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--out", ev_out, "metrics JSON path");

  std::string pr_config, pr_ckpt, pr_out;
  auto* pr = app.add_subcommand("predict", "write prediction maps");
  pr->add_option("--config", pr_config, "run config JSON")->required();
  pr->add_option("--ckpt", pr_ckpt, "checkpoint path")->required();
  pr->add_option("--out-dir", pr_out, "output directory")->required();

  // plot
  std::string pl_in, pl_out, pl_view = "faces", pl_calib;
  int pl_width = 0, pl_height = 0;
  auto* pl = app.add_subcommand("plot", "render a map to a PPM image");
  pl->add_option("--in", pl_in, "input map")->required();
  pl->add_option("--out", pl_out, "output PPM")->required();
  pl->add_option("--view", pl_view, "faces or fisheye")
      ->check(CLI::IsMember({"faces", "fisheye"}));
  pl->add_option("--calib", pl_calib, "calibration JSON for the fisheye view");
  pl->add_option("--width", pl_width, "fisheye view width");
  pl->add_option("--height", pl_height, "fisheye view height");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gi->parsed()) return cmd_grid_info(gi_nside, gi_patch, gi_window, gi_faces, gi_stages);
    if (mp->parsed())
      return cmd_make_plan(mp_nside, mp_patch, mp_faces, mp_strategy, mp_shift, mp_window, mp_out);
    if (gd->parsed())
      return cmd_gen_data(gd_seed, gd_count, gd_nside, gd_objects, gd_raster, gd_width, gd_height,
                          gd_out);
    if (rs->parsed())
      return cmd_resample(rs_calib, rs_in, rs_out, rs_interp, rs_nside, rs_width, rs_height);
    if (tr->parsed()) return cmd_train(tr_config, tr_out);
    if (ev->parsed()) return cmd_eval(ev_config, ev_ckpt, ev_out);
    if (pr->parsed()) return cmd_predict(pr_config, pr_ckpt, pr_out);
    if (pl->parsed()) return cmd_plot(pl_in, pl_out, pl_view, pl_calib, pl_width, pl_height);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
