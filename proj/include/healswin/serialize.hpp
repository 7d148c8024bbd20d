#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "healswin/fisheye.hpp"
#include "healswin/grid_plan.hpp"
#include "healswin/tensor.hpp"

// The HSWM1 container: 8-byte magic "HSWM1\0\0\0", little-endian u32 header
// length, JSON header, optional per-pixel validity bitmap (LSB-first), then
// the payload as little-endian f32 or i64, nested order, channel-minor.
// Every artifact (maps, rasters, plans, checkpoints) uses this container.

namespace healswin::io {

struct Container {
  nlohmann::json header;
  std::vector<std::uint8_t> validity_bits;  // packed, empty if none
  std::vector<std::uint8_t> payload;        // raw little-endian bytes
};

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

void write_map(const std::filesystem::path& path, const HealpixMap& map);
HealpixMap read_map(const std::filesystem::path& path);

void write_raster(const std::filesystem::path& path, const ImageRaster& img,
                  const std::vector<std::uint8_t>& validity = {});
struct RasterFile {
  ImageRaster raster;
  std::vector<std::uint8_t> validity;  // empty if none stored
};
RasterFile read_raster(const std::filesystem::path& path);

/// Plan sidecar: i64 payload holding forward, inverse, origin_group back to
/// back; header records grid geometry, strategy, shift and window size.
void write_plan(const std::filesystem::path& path, const plan::ShiftPlan& p,
                std::int64_t window_size);
struct PlanFile {
  plan::ShiftPlan plan;
  std::int64_t window_size{0};
};
PlanFile read_plan(const std::filesystem::path& path);

/// Checkpoint: f32 payload of all tensors in store order; header carries the
/// manifest of names and shapes plus caller metadata (model config, task,
/// depth statistics).
void write_checkpoint(const std::filesystem::path& path, const ad::ParamStore<float>& store,
                      const nlohmann::json& meta);
struct CheckpointFile {
  std::vector<std::string> names;
  std::vector<ad::Array<float>> tensors;
  nlohmann::json meta;
};
CheckpointFile read_checkpoint(const std::filesystem::path& path);

/// Binary PPM (P6) for plot output; values clamped to [0, 1].
void write_ppm(const std::filesystem::path& path, const ImageRaster& rgb);

void write_text(const std::filesystem::path& path, const std::string& text);

std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& flags);
std::vector<std::uint8_t> unpack_bits(const std::vector<std::uint8_t>& bits, std::size_t n);

}  // namespace healswin::io
