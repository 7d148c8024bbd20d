#include "healswin/grid_plan.hpp"

#include <algorithm>
#include <map>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>
#include <tuple>

namespace healswin::plan {

namespace {

bool is_pow4(std::int64_t v) {
  if (v <= 0 || (v & (v - 1)) != 0) return false;
  // power of two with an even exponent
  return (v & 0x5555555555555555LL) != 0;
}

void check_faces(int num_faces) {
  if (num_faces != 8 && num_faces != 12)
    throw std::invalid_argument("num_faces must be 8 or 12, got " + std::to_string(num_faces));
}

}  // namespace

std::pair<std::int64_t, std::int64_t> subset_base8(hp::NSide nside) {
  return {0, 8 * nside.npface()};
}

PatchGrid build_patches(hp::NSide nside_pixels, std::int64_t patch_size, int num_faces) {
  check_faces(num_faces);
  if (!is_pow4(patch_size))
    throw std::invalid_argument("patch_size must be a power of four, got " +
                                std::to_string(patch_size));
  std::int64_t edge = 1;
  while (edge * edge < patch_size) edge *= 2;
  if (nside_pixels.value % edge != 0 || nside_pixels.value < edge)
    throw std::invalid_argument("patch_size " + std::to_string(patch_size) +
                                " does not divide an nside " +
                                std::to_string(nside_pixels.value) + " grid");
  return PatchGrid{nside_pixels.value / edge, patch_size, num_faces};
}

WindowPartition partition_windows(const PatchGrid& grid, std::int64_t window_size) {
  const std::int64_t n = grid.length();
  if (window_size != n && !is_pow4(window_size))
    throw std::invalid_argument("window_size must be a power of four (or the full list), got " +
                                std::to_string(window_size));
  if (window_size <= 0 || n % window_size != 0)
    throw std::invalid_argument("window_size " + std::to_string(window_size) +
                                " does not tile " + std::to_string(n) + " patches");
  return WindowPartition{grid, window_size, n / window_size};
}

PatchGrid merge_index(const PatchGrid& grid) {
  if (grid.nside < 2) throw std::invalid_argument("merge_index: cannot merge below nside 1");
  return PatchGrid{grid.nside / 2, grid.patch_size * 4, grid.num_faces};
}

PatchGrid expand_index(const PatchGrid& grid) {
  if (grid.patch_size < 4)
    throw std::invalid_argument("expand_index: patches already at pixel resolution");
  return PatchGrid{grid.nside * 2, grid.patch_size / 4, grid.num_faces};
}

ShiftPlan spiral_shift_plan(const PatchGrid& grid, std::int64_t shift) {
  const std::int64_t n = grid.length();
  if (shift < 0 || shift >= n)
    throw std::invalid_argument("spiral shift " + std::to_string(shift) +
                                " out of range for " + std::to_string(n) + " patches");

  const hp::NSide ns(grid.nside);

  // Ring order restricted to the subset: sort the nested ids by full-sphere
  // ring index. For 12 faces this is plain nest->ring; for 8 the positions
  // stay dense in [0, n).
  std::vector<std::int64_t> ring_of(static_cast<std::size_t>(n));
  for (std::int64_t p = 0; p < n; ++p) ring_of[p] = hp::nest_to_ring(ns, p);
  std::vector<std::int64_t> by_ring(static_cast<std::size_t>(n));
  std::iota(by_ring.begin(), by_ring.end(), 0);
  std::sort(by_ring.begin(), by_ring.end(),
            [&](std::int64_t a, std::int64_t b) { return ring_of[a] < ring_of[b]; });
  std::vector<std::int64_t> ring_pos(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) ring_pos[by_ring[i]] = i;

  ShiftPlan out;
  out.grid = grid;
  out.strategy = ShiftStrategy::spiral;
  out.shift = shift;
  out.masked = shift != 0;
  out.forward.resize(static_cast<std::size_t>(n));
  out.inverse.resize(static_cast<std::size_t>(n));
  out.origin_group.resize(static_cast<std::size_t>(n));

  for (std::int64_t p = 0; p < n; ++p) {
    const std::int64_t rp = ring_pos[p];
    const std::int64_t src = (rp - shift + n) % n;
    out.forward[p] = by_ring[src];
    // Content landing at ring position < shift rolled around the list end:
    // it originates at the half-sphere boundary, its new neighbours at the
    // pole.
    out.origin_group[p] = rp < shift ? 1 : 0;
  }
  for (std::int64_t p = 0; p < n; ++p) out.inverse[out.forward[p]] = p;
  return out;
}

ShiftPlan grid_shift_plan(const PatchGrid& grid, std::int64_t shift) {
  if (shift < 0 || shift >= grid.nside)
    throw std::invalid_argument("grid shift " + std::to_string(shift) +
                                " out of range for nside " + std::to_string(grid.nside));

  const hp::NSide ns(grid.nside);
  const std::int64_t n = grid.length();
  const std::int64_t per_face = ns.npface();

  ShiftPlan out;
  out.grid = grid;
  out.strategy = ShiftStrategy::grid;
  out.shift = shift;
  out.masked = shift != 0;
  out.forward.resize(static_cast<std::size_t>(n));
  out.inverse.resize(static_cast<std::size_t>(n));
  out.origin_group.resize(static_cast<std::size_t>(n));

  for (std::int64_t p = 0; p < n; ++p) {
    const std::int64_t face = p / per_face;
    std::uint64_t x, y;
    hp::deinterleave_bits(static_cast<std::uint64_t>(p % per_face), x, y);
    const auto xs = static_cast<std::int64_t>(x);
    const auto ys = static_cast<std::int64_t>(y);
    const std::int64_t xsrc = (xs - shift + grid.nside) % grid.nside;
    const std::int64_t ysrc = (ys - shift + grid.nside) % grid.nside;
    out.forward[p] = face * per_face +
                     static_cast<std::int64_t>(hp::interleave_bits(
                         static_cast<std::uint64_t>(xsrc), static_cast<std::uint64_t>(ysrc)));
    // Quadrant labels as in the flat cyclic shift: wrapped strip in x, in y,
    // or both.
    out.origin_group[p] =
        static_cast<std::int32_t>((xs < shift ? 1 : 0) + (ys < shift ? 2 : 0));
  }
  for (std::int64_t p = 0; p < n; ++p) out.inverse[out.forward[p]] = p;
  return out;
}

AttentionMask attention_mask(const ShiftPlan& plan, const WindowPartition& part) {
  if (plan.grid.nside != part.grid.nside || plan.grid.num_faces != part.grid.num_faces ||
      plan.grid.patch_size != part.grid.patch_size)
    throw std::invalid_argument("attention_mask: plan and partition grids differ");

  const std::int64_t ws = part.window_size;
  AttentionMask mask;
  mask.window_size = ws;
  mask.num_windows = part.num_windows;
  mask.attend.assign(static_cast<std::size_t>(part.num_windows * ws * ws), 0);
  for (std::int64_t w = 0; w < part.num_windows; ++w) {
    const std::int64_t base = w * ws;
    for (std::int64_t i = 0; i < ws; ++i)
      for (std::int64_t j = 0; j < ws; ++j)
        mask.attend[(base + i) * ws + j] =
            plan.origin_group[base + i] == plan.origin_group[base + j] ? 1 : 0;
  }
  return mask;
}

std::shared_ptr<const ShiftPlan> cached_plan(const PatchGrid& grid, ShiftStrategy strategy,
                                             std::int64_t shift) {
  using Key = std::tuple<std::int64_t, std::int64_t, int, int, std::int64_t>;
  static std::mutex mu;
  static std::map<Key, std::shared_ptr<const ShiftPlan>> cache;

  const Key key{grid.nside, grid.patch_size, grid.num_faces, static_cast<int>(strategy), shift};
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto built = std::make_shared<ShiftPlan>(strategy == ShiftStrategy::spiral
                                               ? spiral_shift_plan(grid, shift)
                                               : grid_shift_plan(grid, shift));
  cache.emplace(key, built);
  return built;
}

}  // namespace healswin::plan
