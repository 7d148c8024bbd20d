#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "healswin/healpix.hpp"

// Index-level plans consumed by the transformer: the 8/12 base-pixel subset,
// patch grids, window partitions, merge/expand maps and the two window-shift
// strategies (spiral, grid) with their attention masks. All plans are pure
// index permutations; features move, the token list stays in nested order.

namespace healswin::plan {

enum class ShiftStrategy { spiral, grid };

/// A resolution level of the token list: num_faces * nside^2 consecutive
/// nested-index entries, each covering patch_size pixels of the input grid.
struct PatchGrid {
  std::int64_t nside{1};       // patch-level resolution
  std::int64_t patch_size{1};  // pixels aggregated per patch, power of four
  int num_faces{8};            // 8 (fisheye subset) or 12 (full sphere)

  std::int64_t length() const { return num_faces * nside * nside; }
};

struct WindowPartition {
  PatchGrid grid;
  std::int64_t window_size{1};
  std::int64_t num_windows{0};
};

/// Permutation pair driving a shifted attention block. Gather semantics:
/// shifted[i] = tokens[forward[i]], restored[i] = shifted[inverse[i]].
/// origin_group labels the pre-shift region a token came from; attention
/// must not mix groups within a window.
struct ShiftPlan {
  PatchGrid grid;
  ShiftStrategy strategy{ShiftStrategy::spiral};
  std::int64_t shift{0};
  bool masked{false};
  std::vector<std::int64_t> forward;
  std::vector<std::int64_t> inverse;
  std::vector<std::int32_t> origin_group;
};

/// Per-window boolean matrices, true = attend. Row-major window_size^2
/// entries per window.
struct AttentionMask {
  std::int64_t window_size{0};
  std::int64_t num_windows{0};
  std::vector<std::uint8_t> attend;

  bool at(std::int64_t w, std::int64_t i, std::int64_t j) const {
    return attend[(w * window_size + i) * window_size + j] != 0;
  }
};

/// Nested-index range [0, 8 * nside^2): base pixels 0..7, the north caps
/// plus the equatorial belt.
std::pair<std::int64_t, std::int64_t> subset_base8(hp::NSide nside);

PatchGrid build_patches(hp::NSide nside_pixels, std::int64_t patch_size, int num_faces);

/// Windows are contiguous nested runs. window_size must be a power of four
/// (a geometric quadrilateral) or equal to grid.length (one global window).
WindowPartition partition_windows(const PatchGrid& grid, std::int64_t window_size);

PatchGrid merge_index(const PatchGrid& grid);
PatchGrid expand_index(const PatchGrid& grid);

/// Roll along the ring-ordered subset list by `shift` patches. Tokens that
/// wrap across the list boundary (pole / half-sphere edge) get their own
/// origin group.
ShiftPlan spiral_shift_plan(const PatchGrid& grid, std::int64_t shift);

/// Roll each face's local (x, y) grid by `shift` along both axes. Wrapped
/// rows/columns get quadrant origin groups, mirroring the flat cyclic-shift
/// mask. No patch crosses a base-pixel boundary.
ShiftPlan grid_shift_plan(const PatchGrid& grid, std::int64_t shift);

AttentionMask attention_mask(const ShiftPlan& plan, const WindowPartition& part);

/// Process-wide cache; plans are immutable once built and shared across
/// threads.
std::shared_ptr<const ShiftPlan> cached_plan(const PatchGrid& grid, ShiftStrategy strategy,
                                             std::int64_t shift);

}  // namespace healswin::plan
