#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <set>

#include "healswin/grid_plan.hpp"
#include "healswin/metrics.hpp"
#include "healswin/model.hpp"
#include "healswin/runconfig.hpp"
#include "healswin/serialize.hpp"
#include "healswin/synthetic.hpp"
#include "healswin/train.hpp"

namespace py = pybind11;
using namespace healswin;

namespace {

template <typename T>
py::array_t<T> to_array(const std::vector<T>& v, std::vector<py::ssize_t> shape) {
  py::array_t<T> out(shape);
  std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(T));
  return out;
}

fisheye::CameraCalibration calibration_from_dict(const py::dict& d) {
  fisheye::CameraCalibration cal;
  if (d.contains("poly")) {
    const auto poly = d["poly"].cast<std::vector<double>>();
    if (poly.size() != 4) throw std::invalid_argument("poly: expected 4 coefficients");
    for (int i = 0; i < 4; ++i) cal.poly[i] = poly[i];
  }
  cal.width = d["width"].cast<int>();
  cal.height = d["height"].cast<int>();
  cal.cx = d.contains("cx") ? d["cx"].cast<double>() : (cal.width - 1) / 2.0;
  cal.cy = d.contains("cy") ? d["cy"].cast<double>() : (cal.height - 1) / 2.0;
  cal.aspect = d.contains("aspect") ? d["aspect"].cast<double>() : 1.0;
  if (!d.contains("poly")) cal = fisheye::default_camera(cal.width, cal.height);
  return cal;
}

ImageRaster raster_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 3) throw std::invalid_argument("raster: expected (H, W, C) float32 array");
  ImageRaster img;
  img.height = static_cast<int>(arr.shape(0));
  img.width = static_cast<int>(arr.shape(1));
  img.channels = static_cast<int>(arr.shape(2));
  img.data.assign(arr.data(), arr.data() + arr.size());
  return img;
}

py::dict map_to_dict(const HealpixMap& m) {
  py::dict out;
  out["nside"] = m.nside;
  out["num_faces"] = m.num_faces;
  out["data"] = to_array(m.data, {static_cast<py::ssize_t>(m.num_pixels()),
                                  static_cast<py::ssize_t>(m.channels)});
  if (!m.validity.empty())
    out["validity"] = to_array(m.validity, {static_cast<py::ssize_t>(m.num_pixels())});
  return out;
}

HealpixMap map_from_args(const py::array_t<float, py::array::c_style | py::array::forcecast>& data,
                         std::int64_t nside, int num_faces) {
  if (data.ndim() != 2) throw std::invalid_argument("map data: expected (npix, C) float32 array");
  HealpixMap m;
  m.nside = nside;
  m.num_faces = num_faces;
  m.channels = static_cast<int>(data.shape(1));
  if (data.shape(0) != num_faces * nside * nside)
    throw std::invalid_argument("map data: row count != num_faces * nside^2");
  m.data.assign(data.data(), data.data() + data.size());
  return m;
}

}  // namespace

PYBIND11_MODULE(_healswin, m) {
  m.doc() = "HEALPix windowed-attention toolkit";

  // ---- pixelization -------------------------------------------------------
  m.def("npix", [](std::int64_t nside) { return hp::npix(hp::NSide(nside)); }, py::arg("nside"));
  m.def(
      "nest_to_ring",
      [](std::int64_t nside, std::int64_t p) { return hp::nest_to_ring(hp::NSide(nside), p); },
      py::arg("nside"), py::arg("p"));
  m.def(
      "ring_to_nest",
      [](std::int64_t nside, std::int64_t p) { return hp::ring_to_nest(hp::NSide(nside), p); },
      py::arg("nside"), py::arg("p"));
  m.def(
      "pix_to_ang",
      [](std::int64_t nside, py::array_t<std::int64_t> pixels, const std::string& scheme) {
        const hp::NSide ns(nside);
        const auto sch = scheme == "ring" ? hp::Scheme::ring : hp::Scheme::nested;
        auto buf = pixels.unchecked<1>();
        py::array_t<double> out({static_cast<py::ssize_t>(buf.shape(0)), py::ssize_t(2)});
        auto o = out.mutable_unchecked<2>();
        for (py::ssize_t i = 0; i < buf.shape(0); ++i) {
          const auto a = hp::pix_to_ang(ns, buf(i), sch);
          o(i, 0) = a.theta;
          o(i, 1) = a.phi;
        }
        return out;
      },
      py::arg("nside"), py::arg("pixels"), py::arg("scheme") = "nested");
  m.def(
      "ang_to_pix",
      [](std::int64_t nside, py::array_t<double> theta, py::array_t<double> phi,
         const std::string& scheme) {
        const hp::NSide ns(nside);
        const auto sch = scheme == "ring" ? hp::Scheme::ring : hp::Scheme::nested;
        auto t = theta.unchecked<1>();
        auto p = phi.unchecked<1>();
        if (t.shape(0) != p.shape(0))
          throw std::invalid_argument("theta and phi must have equal length");
        py::array_t<std::int64_t> out(t.shape(0));
        auto o = out.mutable_unchecked<1>();
        for (py::ssize_t i = 0; i < t.shape(0); ++i)
          o(i) = hp::ang_to_pix(ns, {t(i), p(i)}, sch);
        return out;
      },
      py::arg("nside"), py::arg("theta"), py::arg("phi"), py::arg("scheme") = "nested");
  m.def(
      "local_xy",
      [](std::int64_t nside, std::int64_t p) {
        const auto fc = hp::local_xy(hp::NSide(nside), p);
        return py::make_tuple(fc.face, fc.x, fc.y);
      },
      py::arg("nside"), py::arg("p"));
  m.def(
      "child_range",
      [](std::int64_t coarse, std::int64_t p, std::int64_t fine) {
        return hp::child_range(hp::NSide(coarse), p, hp::NSide(fine));
      },
      py::arg("nside_coarse"), py::arg("p"), py::arg("nside_fine"));

  // ---- plans ---------------------------------------------------------------
  m.def(
      "shift_plan",
      [](std::int64_t nside_pixels, std::int64_t patch_size, int num_faces,
         const std::string& strategy, std::int64_t shift) {
        const auto grid = plan::build_patches(hp::NSide(nside_pixels), patch_size, num_faces);
        const auto pl = strategy == "grid" ? plan::grid_shift_plan(grid, shift)
                                           : plan::spiral_shift_plan(grid, shift);
        py::dict out;
        out["forward"] = to_array(pl.forward, {static_cast<py::ssize_t>(pl.forward.size())});
        out["inverse"] = to_array(pl.inverse, {static_cast<py::ssize_t>(pl.inverse.size())});
        out["origin_group"] =
            to_array(pl.origin_group, {static_cast<py::ssize_t>(pl.origin_group.size())});
        out["length"] = grid.length();
        out["nside"] = grid.nside;
        return out;
      },
      py::arg("nside_pixels"), py::arg("patch_size"), py::arg("num_faces"), py::arg("strategy"),
      py::arg("shift"));
  m.def(
      "rel_pos_index",
      [](std::int64_t window_size) {
        const auto rp = model::rel_pos_index(window_size);
        py::dict out;
        out["rows"] = rp->rows;
        out["index"] = to_array(rp->index, {static_cast<py::ssize_t>(window_size),
                                            static_cast<py::ssize_t>(window_size)});
        return out;
      },
      py::arg("window_size"));
  m.def(
      "layer_chain",
      [](std::int64_t nside, std::int64_t patch_size, std::int64_t window_size, int stages,
         int num_faces) {
        model::ModelConfig cfg;
        cfg.nside = nside;
        cfg.patch_size = patch_size;
        cfg.window_size = window_size;
        cfg.num_faces = num_faces;
        cfg.depths.assign(stages, 2);
        cfg.dims.assign(stages, 8);
        cfg.heads.assign(stages, 2);
        py::list out;
        for (const auto& li : model::layer_chain(cfg)) {
          py::dict row;
          row["layer"] = li.name;
          row["tokens"] = li.tokens;
          row["windows"] = li.windows;
          row["windows_per_base"] = li.windows_per_base;
          row["nside"] = li.nside;
          row["followed_by"] = li.followed_by;
          out.append(row);
        }
        return out;
      },
      py::arg("nside"), py::arg("patch_size") = 4, py::arg("window_size") = 64,
      py::arg("stages") = 4, py::arg("num_faces") = 8);

  // ---- resampling -----------------------------------------------------------
  m.def(
      "resample_to_healpix",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& image,
         const py::dict& calibration, std::int64_t nside, const std::string& interp) {
        const auto img = raster_from_array(image);
        const auto cal = calibration_from_dict(calibration);
        const auto mode =
            interp == "nearest" ? fisheye::Interp::nearest : fisheye::Interp::bilinear;
        return map_to_dict(fisheye::resample_to_healpix(img, cal, hp::NSide(nside), mode));
      },
      py::arg("image"), py::arg("calibration"), py::arg("nside"), py::arg("interp") = "bilinear");
  m.def(
      "resample_to_raster",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& data,
         std::int64_t nside, int num_faces, const py::dict& calibration) {
        const auto map = map_from_args(data, nside, num_faces);
        const auto cal = calibration_from_dict(calibration);
        const auto rr = fisheye::resample_to_raster(map, cal, cal.width, cal.height);
        py::dict out;
        out["raster"] = to_array(rr.raster.data, {rr.raster.height, rr.raster.width,
                                                  rr.raster.channels});
        out["covered"] = to_array(rr.covered, {rr.raster.height, rr.raster.width});
        return out;
      },
      py::arg("data"), py::arg("nside"), py::arg("num_faces"), py::arg("calibration"));

  // ---- metrics ---------------------------------------------------------------
  m.def(
      "chamfer",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
        auto cloud = [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
          if (x.ndim() != 2 || x.shape(1) != 3)
            throw std::invalid_argument("point cloud: expected (N, 3) array");
          metrics::PointCloud c;
          auto u = x.unchecked<2>();
          c.points.reserve(static_cast<std::size_t>(u.shape(0)));
          for (py::ssize_t i = 0; i < u.shape(0); ++i)
            c.points.push_back({u(i, 0), u(i, 1), u(i, 2)});
          return c;
        };
        return metrics::chamfer(cloud(a), cloud(b));
      },
      py::arg("p"), py::arg("q"));
  m.def(
      "miou",
      [](const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& pred,
         const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& gt,
         int num_classes, const std::vector<int>& exclude) {
        std::vector<std::int32_t> p(pred.data(), pred.data() + pred.size());
        std::vector<std::int32_t> g(gt.data(), gt.data() + gt.size());
        const auto rep = metrics::intersection_over_union(
            p, g, {}, num_classes, std::set<int>(exclude.begin(), exclude.end()));
        py::dict out;
        out["miou"] = rep.miou;
        out["per_class"] = rep.per_class;
        out["skipped"] = rep.skipped;
        return out;
      },
      py::arg("pred"), py::arg("gt"), py::arg("num_classes"), py::arg("exclude") = std::vector<int>{});
  m.def("class_weights", &metrics::class_weights, py::arg("counts"));

  // ---- synthetic data ----------------------------------------------------------
  m.def(
      "generate_sample",
      [](std::uint64_t seed, std::int64_t nside, int num_objects) {
        synthetic::SceneSpec spec;
        spec.seed = seed;
        spec.nside = nside;
        spec.num_objects = num_objects;
        spec.camera = fisheye::default_camera(4 * static_cast<int>(nside),
                                              4 * static_cast<int>(nside));
        const auto s = synthetic::generate(spec);
        py::dict out;
        out["image"] = map_to_dict(s.image);
        out["labels"] = map_to_dict(s.labels);
        out["depth"] = map_to_dict(s.depth);
        out["sky_mask"] = to_array(s.sky_mask, {static_cast<py::ssize_t>(s.sky_mask.size())});
        return out;
      },
      py::arg("seed"), py::arg("nside"), py::arg("num_objects") = 4);

  // ---- model ----------------------------------------------------------------
  py::class_<model::HealSwin<float>>(m, "Model")
      .def(py::init([](const std::string& config_json, std::uint64_t seed) {
             const auto j = nlohmann::json::parse(config_json);
             run::RunConfig cfg = run::parse_run_config(j);
             return model::HealSwin<float>(cfg.model, seed);
           }),
           py::arg("config_json"), py::arg("seed") = 0)
      .def_property_readonly("num_parameters",
                             [](const model::HealSwin<float>& net) {
                               return net.params().total_parameters();
                             })
      .def("trace_json",
           [](const model::HealSwin<float>& net) {
             return model::layer_chain_json(net.config());
           })
      .def(
          "forward",
          [](const model::HealSwin<float>& net,
             const py::array_t<float, py::array::c_style | py::array::forcecast>& data) {
            const auto in = map_from_args(data, net.config().nside, net.config().num_faces);
            return map_to_dict(net.forward(in));
          },
          py::arg("data"));

  m.def(
      "train",
      [](const std::string& config_json) {
        const auto j = nlohmann::json::parse(config_json);
        run::RunConfig cfg = run::parse_run_config(j);
        const auto data = run::build_dataset(cfg.data, false);
        model::HealSwin<float> net(cfg.model, cfg.train.seed);
        const auto result = run::train_model(net, cfg, data);
        const auto metrics = run::evaluate(net, cfg, data, result.depth_stats);
        py::dict out;
        out["loss_curve"] = result.loss_curve;
        out["final_loss"] = result.final_loss;
        out["metrics"] = py::module_::import("json").attr("loads")(metrics.dump());
        return out;
      },
      py::arg("config_json"));
}
