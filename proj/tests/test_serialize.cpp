#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include "healswin/plot.hpp"
#include "healswin/serialize.hpp"

using namespace healswin;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / "healswin_io_test") {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("serialize") {
  TEST_CASE("map round trip preserves data, validity and header") {
    TempDir tmp;
    HealpixMap map = HealpixMap::zeros(4, 8, 2);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> dist(-5.f, 5.f);
    for (auto& v : map.data) v = dist(rng);
    map.validity.assign(static_cast<std::size_t>(map.num_pixels()), 1);
    map.validity[7] = 0;
    map.validity[100] = 0;

    const fs::path p = tmp.path / "map.hswm";
    io::write_map(p, map);
    const auto back = io::read_map(p);
    CHECK(back.nside == 4);
    CHECK(back.num_faces == 8);
    CHECK(back.channels == 2);
    CHECK(back.data == map.data);
    CHECK(back.validity == map.validity);

    // byte-identical rewrite
    const auto b1 = file_bytes(p);
    io::write_map(p, map);
    CHECK(file_bytes(p) == b1);
  }

  TEST_CASE("magic is checked") {
    TempDir tmp;
    const fs::path p = tmp.path / "bad.hswm";
    std::ofstream(p, std::ios::binary) << "NOTHSWM1 garbage";
    CHECK_THROWS_WITH_AS(io::read_container(p), doctest::Contains("HSWM1"), std::runtime_error);
  }

  TEST_CASE("raster round trip") {
    TempDir tmp;
    ImageRaster img = ImageRaster::zeros(6, 5, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i) * 0.5f;
    std::vector<std::uint8_t> valid(30, 1);
    valid[4] = 0;
    const fs::path p = tmp.path / "img.hswm";
    io::write_raster(p, img, valid);
    const auto back = io::read_raster(p);
    CHECK(back.raster.width == 6);
    CHECK(back.raster.height == 5);
    CHECK(back.raster.data == img.data);
    CHECK(back.validity == valid);
  }

  TEST_CASE("plan sidecar round trip") {
    TempDir tmp;
    const auto grid = plan::build_patches(hp::NSide(8), 4, 8);
    const auto p = plan::spiral_shift_plan(grid, 5);
    const fs::path path = tmp.path / "plan.hswm";
    io::write_plan(path, p, 16);
    const auto back = io::read_plan(path);
    CHECK(back.plan.forward == p.forward);
    CHECK(back.plan.inverse == p.inverse);
    CHECK(back.plan.origin_group == p.origin_group);
    CHECK(back.plan.shift == 5);
    CHECK(back.plan.strategy == plan::ShiftStrategy::spiral);
    CHECK(back.window_size == 16);
    CHECK(back.plan.grid.nside == grid.nside);
  }

  TEST_CASE("checkpoint carries manifest, payload and metadata") {
    TempDir tmp;
    ad::ParamStore<float> store;
    auto a = ad::Array<float>::zeros({2, 3});
    for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] = static_cast<float>(i);
    store.add("layer.w", std::move(a));
    store.add("layer.b", ad::Array<float>::full({3}, 0.5f));

    const fs::path p = tmp.path / "ckpt.hswm";
    io::write_checkpoint(p, store, {{"task", "segmentation"}});
    const auto back = io::read_checkpoint(p);
    REQUIRE(back.names.size() == 2);
    CHECK(back.names[0] == "layer.w");
    CHECK(back.tensors[0].shape == ad::Shape{2, 3});
    CHECK(back.tensors[0].v[4] == 4.f);
    CHECK(back.tensors[1].v == std::vector<float>(3, 0.5f));
    CHECK(back.meta.at("task") == "segmentation");
  }

  TEST_CASE("validity bits pack LSB-first") {
    const std::vector<std::uint8_t> flags = {1, 0, 0, 1, 1, 0, 0, 0, 1};
    const auto bits = io::pack_bits(flags);
    REQUIRE(bits.size() == 2);
    CHECK(bits[0] == 0b00011001);
    CHECK(bits[1] == 0b00000001);
    CHECK(io::unpack_bits(bits, flags.size()) == flags);
  }

  TEST_CASE("ppm output is the fixed montage layout") {
    TempDir tmp;
    HealpixMap map = HealpixMap::zeros(2, 8, 1);
    for (std::int64_t i = 0; i < map.num_pixels(); ++i) map.at(i, 0) = static_cast<float>(i);
    const auto img = io::montage_faces(map);
    CHECK(img.width == 8);   // 4 tiles of nside 2
    CHECK(img.height == 4);  // 2 rows
    const fs::path p = tmp.path / "map.ppm";
    io::write_ppm(p, img);
    const auto bytes = file_bytes(p);
    const std::string header(bytes.begin(), bytes.begin() + 11);
    CHECK(header == "P6\n8 4\n255\n");
    CHECK(bytes.size() == 11 + 8 * 4 * 3);

    // face 0 pixel (x=1, y=0) lands at montage (1, nside-1) = byte row 1
    const hp::NSide ns(2);
    const auto fc = hp::local_xy(ns, 1);  // nested 1 -> (x=1, y=0)
    CHECK(fc.x == 1);
    CHECK(fc.y == 0);
    const std::size_t off = 11 + ((1 * 8) + 1) * 3;  // row 1, col 1
    const float val = map.at(1, 0);
    const float lo = 0.f, span = 15.f;
    const auto expect = static_cast<std::uint8_t>((val - lo) / span * 255.f + 0.5f);
    CHECK(bytes[off] == expect);
  }

  TEST_CASE("failed writes leave no partial file") {
    HealpixMap map = HealpixMap::zeros(2, 8, 1);
    const fs::path p = "/nonexistent_dir_hswm/map.hswm";
    CHECK_THROWS(io::write_map(p, map));
    CHECK_FALSE(fs::exists(p));
  }
}
