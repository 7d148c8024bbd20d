#pragma once

#include <cstdint>
#include <utility>

// HEALPix pixelization (Gorski et al. conventions): 12 base quadrilaterals,
// each subdivided nside x nside, all pixels equal-area and iso-latitude.
// Base pixels 0-3 cover the north cap, 4-7 the equatorial belt, 8-11 the
// south cap. Nested ordering is the Z-order curve within each base pixel;
// ring ordering walks latitude rings from north to south, ascending phi.

namespace healswin::hp {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

/// Grid subdivision count per base-pixel edge. Must be a power of two.
struct NSide {
  std::int64_t value{1};

  explicit NSide(std::int64_t v);
  std::int64_t npix() const { return 12 * value * value; }
  std::int64_t npface() const { return value * value; }
};

enum class Scheme { nested, ring };

/// Pixel-center direction. theta in [0, pi] (0 = north pole), phi in [0, 2pi).
struct SphericalAngle {
  double theta{0.0};
  double phi{0.0};
};

/// Position of a nested pixel inside its base quadrilateral.
struct FaceCoord {
  int face{0};          // base pixel, 0..11
  std::int64_t x{0};    // 0..nside-1
  std::int64_t y{0};
};

std::int64_t npix(NSide nside);

std::int64_t nest_to_ring(NSide nside, std::int64_t p_nested);
std::int64_t ring_to_nest(NSide nside, std::int64_t p_ring);

SphericalAngle pix_to_ang(NSide nside, std::int64_t p, Scheme scheme);
std::int64_t ang_to_pix(NSide nside, SphericalAngle ang, Scheme scheme);

std::int64_t base_pixel(NSide nside, std::int64_t p_nested);
FaceCoord local_xy(NSide nside, std::int64_t p_nested);
std::int64_t nested_from_xy(NSide nside, const FaceCoord& fc);

/// Nested-index range [first, last) of the fine-grid descendants of a
/// coarse pixel.
std::pair<std::int64_t, std::int64_t> child_range(NSide nside_coarse,
                                                  std::int64_t p_nested,
                                                  NSide nside_fine);

// Bit interleaving on 32-bit lanes (nside up to 2^13 needs 26 bits).
std::uint64_t interleave_bits(std::uint64_t x, std::uint64_t y);
void deinterleave_bits(std::uint64_t z, std::uint64_t& x, std::uint64_t& y);

}  // namespace healswin::hp
