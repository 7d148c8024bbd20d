#include "healswin/healpix.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace healswin::hp {

namespace {

// Ring index of the northernmost row of each face, in units of nside.
constexpr int kFaceRow[12] = {2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4};
// Phi offset of each face in units of pi/4 (at the equator level).
constexpr int kFacePhi[12] = {1, 3, 5, 7, 0, 2, 4, 6, 1, 3, 5, 7};

bool is_pow2(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

std::int64_t isqrt(std::int64_t v) {
  auto r = static_cast<std::int64_t>(std::sqrt(static_cast<double>(v) + 0.5));
  while (r * r > v) --r;
  while ((r + 1) * (r + 1) <= v) ++r;
  return r;
}

std::int64_t imod(std::int64_t a, std::int64_t m) {
  std::int64_t r = a % m;
  return r < 0 ? r + m : r;
}

void check_pixel(NSide nside, std::int64_t p, const char* what) {
  if (p < 0 || p >= nside.npix())
    throw std::out_of_range(std::string(what) + ": pixel " + std::to_string(p) +
                            " out of range for nside " + std::to_string(nside.value));
}

struct Xyf {
  std::int64_t x, y;
  int face;
};

Xyf nest_to_xyf(NSide nside, std::int64_t p) {
  Xyf r;
  r.face = static_cast<int>(p / nside.npface());
  std::uint64_t x, y;
  deinterleave_bits(static_cast<std::uint64_t>(p % nside.npface()), x, y);
  r.x = static_cast<std::int64_t>(x);
  r.y = static_cast<std::int64_t>(y);
  return r;
}

std::int64_t xyf_to_nest(NSide nside, const Xyf& c) {
  return static_cast<std::int64_t>(c.face) * nside.npface() +
         static_cast<std::int64_t>(
             interleave_bits(static_cast<std::uint64_t>(c.x), static_cast<std::uint64_t>(c.y)));
}

std::int64_t xyf_to_ring(NSide nside, const Xyf& c) {
  const std::int64_t n = nside.value;
  const std::int64_t nl4 = 4 * n;
  const std::int64_t jr = kFaceRow[c.face] * n - c.x - c.y - 1;  // ring, 1-based from north

  std::int64_t nr, n_before, kshift;
  if (jr < n) {  // north polar cap
    nr = jr;
    n_before = 2 * nr * (nr - 1);
    kshift = 0;
  } else if (jr > 3 * n) {  // south polar cap
    nr = nl4 - jr;
    n_before = nside.npix() - 2 * (nr + 1) * nr;
    kshift = 0;
  } else {  // equatorial belt
    nr = n;
    n_before = 2 * n * (n - 1) + (jr - n) * nl4;
    kshift = (jr - n) & 1;
  }

  std::int64_t jp = (kFacePhi[c.face] * nr + c.x - c.y + 1 + kshift) / 2;
  if (jp > nl4) jp -= nl4;
  if (jp < 1) jp += nl4;
  return n_before + jp - 1;
}

Xyf ring_to_xyf(NSide nside, std::int64_t p) {
  const std::int64_t n = nside.value;
  const std::int64_t ncap = 2 * n * (n - 1);
  const std::int64_t np = nside.npix();

  std::int64_t iring, iphi, kshift, nr;
  int face;
  if (p < ncap) {  // north polar cap
    iring = (1 + isqrt(1 + 2 * p)) >> 1;
    iphi = p + 1 - 2 * iring * (iring - 1);
    kshift = 0;
    nr = iring;
    face = static_cast<int>((iphi - 1) / iring);
  } else if (p < np - ncap) {  // equatorial belt
    const std::int64_t ip = p - ncap;
    iring = ip / (4 * n) + n;
    iphi = ip % (4 * n) + 1;
    kshift = (iring + n) & 1;
    nr = n;
    const std::int64_t ire = iring - n + 1;
    const std::int64_t irm = 2 * n + 2 - ire;
    const std::int64_t ifm = (iphi - ire / 2 + n - 1) / n;
    const std::int64_t ifp = (iphi - irm / 2 + n - 1) / n;
    if (ifp == ifm)
      face = static_cast<int>((ifp & 3) + 4);
    else if (ifp < ifm)
      face = static_cast<int>(ifp);
    else
      face = static_cast<int>(ifm + 8);
  } else {  // south polar cap
    const std::int64_t ip = np - p;
    iring = (1 + isqrt(2 * ip - 1)) >> 1;
    iphi = 4 * iring + 1 - (ip - 2 * iring * (iring - 1));
    kshift = 0;
    nr = iring;
    face = static_cast<int>(8 + (iphi - 1) / iring);
    iring = 4 * n - iring;  // count from north
  }

  const std::int64_t irt = iring - kFaceRow[face] * n + 1;
  std::int64_t ipt = 2 * iphi - kFacePhi[face] * nr - kshift - 1;
  if (ipt >= 2 * n) ipt -= 8 * n;

  Xyf r;
  r.x = (ipt - irt) >> 1;
  r.y = (-ipt - irt) >> 1;
  r.face = face;
  return r;
}

SphericalAngle xyf_to_ang(NSide nside, const Xyf& c) {
  const std::int64_t n = nside.value;
  const std::int64_t nl4 = 4 * n;
  const double fact2 = 4.0 / static_cast<double>(nside.npix());
  const std::int64_t jr = kFaceRow[c.face] * n - c.x - c.y - 1;

  double z;
  std::int64_t nr, kshift;
  if (jr < n) {
    nr = jr;
    z = 1.0 - static_cast<double>(nr * nr) * fact2;
    kshift = 0;
  } else if (jr > 3 * n) {
    nr = nl4 - jr;
    z = static_cast<double>(nr * nr) * fact2 - 1.0;
    kshift = 0;
  } else {
    const double fact1 = static_cast<double>(2 * n) * fact2;
    nr = n;
    z = static_cast<double>(2 * n - jr) * fact1;
    kshift = (jr - n) & 1;
  }

  std::int64_t jp = (kFacePhi[c.face] * nr + c.x - c.y + 1 + kshift) / 2;
  if (jp > nl4) jp -= nl4;
  if (jp < 1) jp += nl4;

  SphericalAngle a;
  a.theta = std::acos(z);
  a.phi = (static_cast<double>(jp) - (static_cast<double>(kshift) + 1.0) * 0.5) *
          (kPi / 2) / static_cast<double>(nr);
  return a;
}

}  // namespace

NSide::NSide(std::int64_t v) : value(v) {
  if (!is_pow2(v))
    throw std::invalid_argument("nside must be a positive power of two, got " + std::to_string(v));
  if (v > (std::int64_t{1} << 29))
    throw std::invalid_argument("nside above 2^29 is not supported");
}

std::int64_t npix(NSide nside) { return nside.npix(); }

std::uint64_t interleave_bits(std::uint64_t x, std::uint64_t y) {
  auto spread = [](std::uint64_t v) {
    v &= 0xffffffffULL;
    v = (v | (v << 16)) & 0x0000ffff0000ffffULL;
    v = (v | (v << 8)) & 0x00ff00ff00ff00ffULL;
    v = (v | (v << 4)) & 0x0f0f0f0f0f0f0f0fULL;
    v = (v | (v << 2)) & 0x3333333333333333ULL;
    v = (v | (v << 1)) & 0x5555555555555555ULL;
    return v;
  };
  return spread(x) | (spread(y) << 1);
}

void deinterleave_bits(std::uint64_t z, std::uint64_t& x, std::uint64_t& y) {
  auto compress = [](std::uint64_t v) {
    v &= 0x5555555555555555ULL;
    v = (v | (v >> 1)) & 0x3333333333333333ULL;
    v = (v | (v >> 2)) & 0x0f0f0f0f0f0f0f0fULL;
    v = (v | (v >> 4)) & 0x00ff00ff00ff00ffULL;
    v = (v | (v >> 8)) & 0x0000ffff0000ffffULL;
    v = (v | (v >> 16)) & 0x00000000ffffffffULL;
    return v;
  };
  x = compress(z);
  y = compress(z >> 1);
}

std::int64_t nest_to_ring(NSide nside, std::int64_t p) {
  check_pixel(nside, p, "nest_to_ring");
  return xyf_to_ring(nside, nest_to_xyf(nside, p));
}

std::int64_t ring_to_nest(NSide nside, std::int64_t p) {
  check_pixel(nside, p, "ring_to_nest");
  return xyf_to_nest(nside, ring_to_xyf(nside, p));
}

SphericalAngle pix_to_ang(NSide nside, std::int64_t p, Scheme scheme) {
  check_pixel(nside, p, "pix_to_ang");
  if (scheme == Scheme::nested) return xyf_to_ang(nside, nest_to_xyf(nside, p));
  return xyf_to_ang(nside, ring_to_xyf(nside, p));
}

std::int64_t ang_to_pix(NSide nside, SphericalAngle ang, Scheme scheme) {
  if (!(ang.theta >= 0.0 && ang.theta <= kPi) || !std::isfinite(ang.phi))
    throw std::invalid_argument("ang_to_pix: theta must lie in [0, pi] and phi be finite");

  const std::int64_t n = nside.value;
  const double z = std::cos(ang.theta);
  const double za = std::fabs(z);
  double tt = std::fmod(ang.phi / (kPi / 2), 4.0);
  if (tt < 0) tt += 4.0;

  std::int64_t p_ring;
  if (za <= 2.0 / 3.0) {  // equatorial belt
    const double temp1 = static_cast<double>(n) * (0.5 + tt);
    const double temp2 = static_cast<double>(n) * z * 0.75;
    const auto jp = static_cast<std::int64_t>(temp1 - temp2);  // ascending edge line
    const auto jm = static_cast<std::int64_t>(temp1 + temp2);  // descending edge line
    const std::int64_t ir = n + 1 + jp - jm;                   // ring counted from z = 2/3
    const std::int64_t kshift = 1 - (ir & 1);
    std::int64_t ip = (jp + jm - n + kshift + 1) / 2;
    ip = imod(ip, 4 * n);
    p_ring = 2 * n * (n - 1) + (ir - 1) * 4 * n + ip;
  } else {  // polar caps
    const double tp = tt - std::floor(tt);
    const double tmp = static_cast<double>(n) * std::sqrt(3.0 * (1.0 - za));
    const auto jp = static_cast<std::int64_t>(tp * tmp);
    const auto jm = static_cast<std::int64_t>((1.0 - tp) * tmp);
    const std::int64_t ir = jp + jm + 1;  // ring counted from the closest pole
    std::int64_t ip = static_cast<std::int64_t>(tt * static_cast<double>(ir));
    ip = imod(ip, 4 * ir);
    if (z > 0)
      p_ring = 2 * ir * (ir - 1) + ip;
    else
      p_ring = nside.npix() - 2 * ir * (ir + 1) + ip;
  }

  return scheme == Scheme::ring ? p_ring : ring_to_nest(nside, p_ring);
}

std::int64_t base_pixel(NSide nside, std::int64_t p) {
  check_pixel(nside, p, "base_pixel");
  return p / nside.npface();
}

FaceCoord local_xy(NSide nside, std::int64_t p) {
  check_pixel(nside, p, "local_xy");
  const Xyf c = nest_to_xyf(nside, p);
  return FaceCoord{c.face, c.x, c.y};
}

std::int64_t nested_from_xy(NSide nside, const FaceCoord& fc) {
  if (fc.face < 0 || fc.face > 11 || fc.x < 0 || fc.x >= nside.value || fc.y < 0 ||
      fc.y >= nside.value)
    throw std::out_of_range("nested_from_xy: face coordinate out of range");
  return xyf_to_nest(nside, Xyf{fc.x, fc.y, fc.face});
}

std::pair<std::int64_t, std::int64_t> child_range(NSide nside_coarse, std::int64_t p,
                                                  NSide nside_fine) {
  check_pixel(nside_coarse, p, "child_range");
  if (nside_fine.value <= nside_coarse.value)
    throw std::invalid_argument("child_range: fine nside must exceed coarse nside");
  const std::int64_t ratio = nside_fine.value / nside_coarse.value;
  const std::int64_t r = ratio * ratio;
  return {p * r, (p + 1) * r};
}

}  // namespace healswin::hp
