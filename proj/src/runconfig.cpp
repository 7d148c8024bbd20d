#include "healswin/runconfig.hpp"

#include <fstream>

namespace healswin::run {

namespace {

[[noreturn]] void fail(const std::string& pointer, const std::string& expected) {
  throw std::invalid_argument(pointer + ": expected " + expected);
}

const nlohmann::json* maybe(const nlohmann::json& j, const char* key) {
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

template <typename T>
T get_number(const nlohmann::json& j, const std::string& ptr, const char* key, T fallback) {
  const auto* v = maybe(j, key);
  if (!v) return fallback;
  if (!v->is_number()) fail(ptr + "/" + key, "number");
  return v->get<T>();
}

std::uint64_t get_seed(const nlohmann::json& j, const std::string& ptr, const char* key,
                       std::uint64_t fallback) {
  const auto* v = maybe(j, key);
  if (!v) return fallback;
  if (!v->is_number_integer() && !v->is_number_unsigned()) fail(ptr + "/" + key, "integer seed");
  return v->get<std::uint64_t>();
}

std::vector<int> get_int_list(const nlohmann::json& j, const std::string& ptr, const char* key,
                              std::vector<int> fallback) {
  const auto* v = maybe(j, key);
  if (!v) return fallback;
  if (!v->is_array()) fail(ptr + "/" + key, "array of integers");
  std::vector<int> out;
  for (std::size_t i = 0; i < v->size(); ++i) {
    if (!(*v)[i].is_number_integer()) fail(ptr + "/" + key + "/" + std::to_string(i), "integer");
    out.push_back((*v)[i].get<int>());
  }
  return out;
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) fail("", "object");
  RunConfig cfg;

  if (const auto* m = maybe(j, "model")) {
    if (!m->is_object()) fail("/model", "object");
    const std::string ptr = "/model";
    cfg.model.nside = get_number<std::int64_t>(*m, ptr, "nside", cfg.model.nside);
    cfg.model.num_faces = get_number<int>(*m, ptr, "num_faces", cfg.model.num_faces);
    cfg.model.patch_size = get_number<std::int64_t>(*m, ptr, "patch_size", cfg.model.patch_size);
    cfg.model.window_size =
        get_number<std::int64_t>(*m, ptr, "window_size", cfg.model.window_size);
    cfg.model.shift = get_number<std::int64_t>(*m, ptr, "shift", cfg.model.shift);
    if (const auto* s = maybe(*m, "shift_strategy")) {
      if (!s->is_string()) fail("/model/shift_strategy", "\"spiral\" or \"grid\"");
      const std::string v = s->get<std::string>();
      if (v == "spiral")
        cfg.model.shift_strategy = plan::ShiftStrategy::spiral;
      else if (v == "grid")
        cfg.model.shift_strategy = plan::ShiftStrategy::grid;
      else
        fail("/model/shift_strategy", "\"spiral\" or \"grid\"");
    }
    cfg.model.depths = get_int_list(*m, ptr, "depths", cfg.model.depths);
    cfg.model.dims = get_int_list(*m, ptr, "dims", cfg.model.dims);
    cfg.model.heads = get_int_list(*m, ptr, "heads", cfg.model.heads);
    cfg.model.in_channels = get_number<int>(*m, ptr, "in_channels", cfg.model.in_channels);
    cfg.model.out_channels = get_number<int>(*m, ptr, "out_channels", cfg.model.out_channels);
  }

  if (const auto* t = maybe(j, "train")) {
    if (!t->is_object()) fail("/train", "object");
    const std::string ptr = "/train";
    cfg.train.lr = get_number<double>(*t, ptr, "lr", cfg.train.lr);
    cfg.train.batch = get_number<int>(*t, ptr, "batch", cfg.train.batch);
    cfg.train.steps = get_number<int>(*t, ptr, "steps", cfg.train.steps);
    cfg.train.seed = get_seed(*t, ptr, "seed", cfg.train.seed);
    cfg.train.weight_decay = get_number<double>(*t, ptr, "weight_decay", cfg.train.weight_decay);
    cfg.train.log_every = get_number<int>(*t, ptr, "log_every", cfg.train.log_every);
    if (const auto* task = maybe(*t, "task")) {
      if (!task->is_string()) fail("/train/task", "\"segmentation\" or \"depth\"");
      const std::string v = task->get<std::string>();
      if (v == "segmentation")
        cfg.train.task = Task::segmentation;
      else if (v == "depth")
        cfg.train.task = Task::depth;
      else
        fail("/train/task", "\"segmentation\" or \"depth\"");
    }
    if (cfg.train.lr <= 0) fail("/train/lr", "positive number");
    if (cfg.train.batch < 1) fail("/train/batch", "positive integer");
    if (cfg.train.steps < 0) fail("/train/steps", "non-negative integer");
  }

  if (const auto* d = maybe(j, "data")) {
    if (!d->is_object()) fail("/data", "object");
    const std::string ptr = "/data";
    cfg.data.seed = get_seed(*d, ptr, "seed", cfg.data.seed);
    cfg.data.nside = get_number<std::int64_t>(*d, ptr, "nside", cfg.data.nside);
    cfg.data.num_objects = get_number<int>(*d, ptr, "num_objects", cfg.data.num_objects);
    cfg.data.count = get_number<int>(*d, ptr, "count", cfg.data.count);
    if (const auto* cam = maybe(*d, "camera")) {
      if (!cam->is_object()) fail("/data/camera", "object");
      cfg.data.raster_width = get_number<int>(*cam, "/data/camera", "width", 0);
      cfg.data.raster_height = get_number<int>(*cam, "/data/camera", "height", 0);
      if (cfg.data.raster_width < 2 || cfg.data.raster_height < 2)
        fail("/data/camera", "width and height >= 2");
    }
    if (cfg.data.count < 1) fail("/data/count", "positive integer");
    if (cfg.data.nside != cfg.model.nside)
      throw std::invalid_argument("/data/nside: must match /model/nside");
  } else {
    cfg.data.nside = cfg.model.nside;
  }

  if (const auto* io = maybe(j, "io")) {
    if (!io->is_object()) fail("/io", "object");
    if (const auto* od = maybe(*io, "out_dir")) {
      if (!od->is_string()) fail("/io/out_dir", "string path");
      cfg.out_dir = od->get<std::string>();
    }
  }
  if (const auto* ex = maybe(j, "eval")) {
    if (!ex->is_object()) fail("/eval", "object");
    cfg.exclude_classes = get_int_list(*ex, "/eval", "exclude_classes", cfg.exclude_classes);
  }

  if (cfg.train.task == Task::segmentation && cfg.model.out_channels < 2)
    throw std::invalid_argument("/model/out_channels: segmentation needs >= 2 classes");
  if (cfg.train.task == Task::depth && cfg.model.out_channels != 1)
    throw std::invalid_argument("/model/out_channels: depth regression needs exactly 1");
  cfg.model.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

nlohmann::json run_config_json(const RunConfig& cfg) {
  return {
      {"model",
       {{"nside", cfg.model.nside},
        {"num_faces", cfg.model.num_faces},
        {"patch_size", cfg.model.patch_size},
        {"window_size", cfg.model.window_size},
        {"shift", cfg.model.shift},
        {"shift_strategy",
         cfg.model.shift_strategy == plan::ShiftStrategy::spiral ? "spiral" : "grid"},
        {"depths", cfg.model.depths},
        {"dims", cfg.model.dims},
        {"heads", cfg.model.heads},
        {"in_channels", cfg.model.in_channels},
        {"out_channels", cfg.model.out_channels}}},
      {"train",
       {{"lr", cfg.train.lr},
        {"batch", cfg.train.batch},
        {"steps", cfg.train.steps},
        {"seed", cfg.train.seed},
        {"weight_decay", cfg.train.weight_decay},
        {"log_every", cfg.train.log_every},
        {"task", cfg.train.task == Task::segmentation ? "segmentation" : "depth"}}},
      {"data",
       {{"seed", cfg.data.seed},
        {"nside", cfg.data.nside},
        {"num_objects", cfg.data.num_objects},
        {"count", cfg.data.count}}},
      {"eval", {{"exclude_classes", cfg.exclude_classes}}},
  };
}

}  // namespace healswin::run
