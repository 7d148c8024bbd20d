#include "healswin/serialize.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace healswin::io {

namespace {

constexpr char kMagic[8] = {'H', 'S', 'W', 'M', '1', '\0', '\0', '\0'};

template <typename T>
std::vector<std::uint8_t> to_bytes(const std::vector<T>& v) {
  std::vector<std::uint8_t> out(v.size() * sizeof(T));
  std::memcpy(out.data(), v.data(), out.size());
  return out;
}

template <typename T>
std::vector<T> from_bytes(const std::vector<std::uint8_t>& b) {
  if (b.size() % sizeof(T) != 0) throw std::runtime_error("payload size not a multiple of dtype");
  std::vector<T> out(b.size() / sizeof(T));
  std::memcpy(out.data(), b.data(), b.size());
  return out;
}

std::int64_t validity_count(const nlohmann::json& h) {
  const std::string scheme = h.value("scheme", "nested");
  if (scheme == "raster")
    return h.at("width").get<std::int64_t>() * h.at("height").get<std::int64_t>();
  return h.at("num_faces").get<std::int64_t>() * h.at("nside").get<std::int64_t>() *
         h.at("nside").get<std::int64_t>();
}

}  // namespace

std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& flags) {
  std::vector<std::uint8_t> bits((flags.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < flags.size(); ++i)
    if (flags[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  return bits;
}

std::vector<std::uint8_t> unpack_bits(const std::vector<std::uint8_t>& bits, std::size_t n) {
  std::vector<std::uint8_t> flags(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    flags[i] = (bits[i / 8] >> (i % 8)) & 1u;
  return flags;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const std::string header = c.header.dump();
  if (header.size() > 0xffffffffu) throw std::runtime_error("header too large");

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f.write(kMagic, sizeof(kMagic));
    const auto hlen = static_cast<std::uint32_t>(header.size());
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    if (!c.validity_bits.empty())
      f.write(reinterpret_cast<const char*>(c.validity_bits.data()),
              static_cast<std::streamsize>(c.validity_bits.size()));
    f.write(reinterpret_cast<const char*>(c.payload.data()),
            static_cast<std::streamsize>(c.payload.size()));
    if (!f) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(path.string() + ": not an HSWM1 file");
  std::uint32_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 4);
  std::string header(hlen, '\0');
  f.read(header.data(), hlen);
  if (!f) throw std::runtime_error(path.string() + ": truncated header");

  Container c;
  c.header = nlohmann::json::parse(header);
  if (c.header.value("validity", false)) {
    const auto n = static_cast<std::size_t>((validity_count(c.header) + 7) / 8);
    c.validity_bits.resize(n);
    f.read(reinterpret_cast<char*>(c.validity_bits.data()), static_cast<std::streamsize>(n));
  }
  c.payload.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  return c;
}

void write_map(const std::filesystem::path& path, const HealpixMap& map) {
  Container c;
  c.header = {{"kind", "map"},       {"scheme", "nested"},
              {"nside", map.nside},  {"num_faces", map.num_faces},
              {"channels", map.channels}, {"dtype", "f32le"},
              {"validity", !map.validity.empty()}};
  if (!map.validity.empty()) c.validity_bits = pack_bits(map.validity);
  c.payload = to_bytes(map.data);
  write_container(path, c);
}

HealpixMap read_map(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.header.value("kind", "") != "map" || c.header.value("dtype", "") != "f32le")
    throw std::runtime_error(path.string() + ": not an f32 map");
  HealpixMap m;
  m.nside = c.header.at("nside").get<std::int64_t>();
  m.num_faces = c.header.at("num_faces").get<int>();
  m.channels = c.header.at("channels").get<int>();
  m.data = from_bytes<float>(c.payload);
  if (static_cast<std::int64_t>(m.data.size()) != m.num_pixels() * m.channels)
    throw std::runtime_error(path.string() + ": payload size mismatch");
  if (!c.validity_bits.empty())
    m.validity = unpack_bits(c.validity_bits, static_cast<std::size_t>(m.num_pixels()));
  return m;
}

void write_raster(const std::filesystem::path& path, const ImageRaster& img,
                  const std::vector<std::uint8_t>& validity) {
  Container c;
  c.header = {{"kind", "raster"},  {"scheme", "raster"},      {"width", img.width},
              {"height", img.height}, {"channels", img.channels}, {"dtype", "f32le"},
              {"validity", !validity.empty()}};
  if (!validity.empty()) c.validity_bits = pack_bits(validity);
  c.payload = to_bytes(img.data);
  write_container(path, c);
}

RasterFile read_raster(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.header.value("kind", "") != "raster")
    throw std::runtime_error(path.string() + ": not a raster file");
  RasterFile out;
  out.raster.width = c.header.at("width").get<int>();
  out.raster.height = c.header.at("height").get<int>();
  out.raster.channels = c.header.at("channels").get<int>();
  out.raster.data = from_bytes<float>(c.payload);
  const auto n = static_cast<std::size_t>(out.raster.width) * out.raster.height;
  if (out.raster.data.size() != n * out.raster.channels)
    throw std::runtime_error(path.string() + ": payload size mismatch");
  if (!c.validity_bits.empty()) out.validity = unpack_bits(c.validity_bits, n);
  return out;
}

void write_plan(const std::filesystem::path& path, const plan::ShiftPlan& p,
                std::int64_t window_size) {
  Container c;
  c.header = {{"kind", "plan"},
              {"scheme", "nested"},
              {"nside", p.grid.nside},
              {"num_faces", p.grid.num_faces},
              {"patch_size", p.grid.patch_size},
              {"strategy", p.strategy == plan::ShiftStrategy::spiral ? "spiral" : "grid"},
              {"shift", p.shift},
              {"masked", p.masked},
              {"window_size", window_size},
              {"arrays", {"forward", "inverse", "origin_group"}},
              {"dtype", "i64le"},
              {"validity", false}};
  std::vector<std::int64_t> payload;
  payload.reserve(p.forward.size() * 3);
  payload.insert(payload.end(), p.forward.begin(), p.forward.end());
  payload.insert(payload.end(), p.inverse.begin(), p.inverse.end());
  for (auto g : p.origin_group) payload.push_back(g);
  c.payload = to_bytes(payload);
  write_container(path, c);
}

PlanFile read_plan(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.header.value("kind", "") != "plan" || c.header.value("dtype", "") != "i64le")
    throw std::runtime_error(path.string() + ": not a plan sidecar");
  PlanFile out;
  out.plan.grid.nside = c.header.at("nside").get<std::int64_t>();
  out.plan.grid.num_faces = c.header.at("num_faces").get<int>();
  out.plan.grid.patch_size = c.header.at("patch_size").get<std::int64_t>();
  out.plan.strategy = c.header.at("strategy").get<std::string>() == "grid"
                          ? plan::ShiftStrategy::grid
                          : plan::ShiftStrategy::spiral;
  out.plan.shift = c.header.at("shift").get<std::int64_t>();
  out.plan.masked = c.header.at("masked").get<bool>();
  out.window_size = c.header.at("window_size").get<std::int64_t>();
  const auto all = from_bytes<std::int64_t>(c.payload);
  const std::size_t n = static_cast<std::size_t>(out.plan.grid.length());
  if (all.size() != 3 * n) throw std::runtime_error(path.string() + ": plan payload mismatch");
  out.plan.forward.assign(all.begin(), all.begin() + n);
  out.plan.inverse.assign(all.begin() + n, all.begin() + 2 * n);
  out.plan.origin_group.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    out.plan.origin_group[i] = static_cast<std::int32_t>(all[2 * n + i]);
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const ad::ParamStore<float>& store,
                      const nlohmann::json& meta) {
  Container c;
  nlohmann::json manifest = nlohmann::json::array();
  std::vector<float> payload;
  for (std::int64_t i = 0; i < store.size(); ++i) {
    const auto& e = store.entry(i);
    manifest.push_back({{"name", e.name}, {"shape", e.value.shape}});
    payload.insert(payload.end(), e.value.v.begin(), e.value.v.end());
  }
  c.header = {{"kind", "checkpoint"}, {"dtype", "f32le"}, {"validity", false},
              {"tensors", manifest},  {"meta", meta}};
  c.payload = to_bytes(payload);
  write_container(path, c);
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.header.value("kind", "") != "checkpoint")
    throw std::runtime_error(path.string() + ": not a checkpoint");
  CheckpointFile out;
  out.meta = c.header.value("meta", nlohmann::json::object());
  const auto all = from_bytes<float>(c.payload);
  std::size_t off = 0;
  for (const auto& t : c.header.at("tensors")) {
    ad::Array<float> a;
    a.shape = t.at("shape").get<ad::Shape>();
    const auto n = static_cast<std::size_t>(ad::numel(a.shape));
    if (off + n > all.size()) throw std::runtime_error(path.string() + ": checkpoint truncated");
    a.v.assign(all.begin() + off, all.begin() + off + n);
    off += n;
    out.names.push_back(t.at("name").get<std::string>());
    out.tensors.push_back(std::move(a));
  }
  if (off != all.size()) throw std::runtime_error(path.string() + ": trailing checkpoint bytes");
  return out;
}

void write_ppm(const std::filesystem::path& path, const ImageRaster& rgb) {
  if (rgb.channels != 3) throw std::invalid_argument("write_ppm: raster must have 3 channels");
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f << "P6\n" << rgb.width << " " << rgb.height << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<std::size_t>(rgb.width) * 3);
    for (int y = 0; y < rgb.height; ++y) {
      for (int x = 0; x < rgb.width; ++x)
        for (int ch = 0; ch < 3; ++ch) {
          float v = rgb.at(x, y, ch);
          v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
          row[static_cast<std::size_t>(x) * 3 + ch] =
              static_cast<std::uint8_t>(v * 255.0f + 0.5f);
        }
      f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace healswin::io
