#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "healswin/healpix.hpp"

using namespace healswin;

namespace {

// Independent ring-order oracle: sort pixel centres by latitude ring
// (descending z) and ascending phi, using only pix_to_ang geometry.
std::vector<std::int64_t> ring_order_by_sorting(hp::NSide ns) {
  const std::int64_t n = hp::npix(ns);
  std::vector<double> z(n), phi(n);
  for (std::int64_t p = 0; p < n; ++p) {
    const auto a = hp::pix_to_ang(ns, p, hp::Scheme::nested);
    z[p] = std::cos(a.theta);
    phi[p] = a.phi;
  }
  std::vector<std::int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    if (z[a] != z[b]) return z[a] > z[b];  // north first
    return phi[a] < phi[b];
  });
  return order;  // order[r] = nested index of ring position r
}

}  // namespace

TEST_SUITE("healpix") {
  TEST_CASE("npix formula") {
    CHECK(hp::npix(hp::NSide(1)) == 12);
    CHECK(hp::npix(hp::NSide(16)) == 3072);
    CHECK(hp::npix(hp::NSide(256)) == 786432);
  }

  TEST_CASE("nside must be a power of two") {
    CHECK_THROWS_AS(hp::NSide(0), std::invalid_argument);
    CHECK_THROWS_AS(hp::NSide(3), std::invalid_argument);
    CHECK_THROWS_AS(hp::NSide(-4), std::invalid_argument);
  }

  TEST_CASE("orderings coincide at nside 1") {
    const hp::NSide ns(1);
    for (std::int64_t p = 0; p < 12; ++p) {
      CHECK(hp::nest_to_ring(ns, p) == p);
      CHECK(hp::ring_to_nest(ns, p) == p);
    }
  }

  TEST_CASE("nest_to_ring matches the brute-force ring sort") {
    for (const std::int64_t n : {1, 2, 4, 8}) {
      const hp::NSide ns(n);
      const auto order = ring_order_by_sorting(ns);
      for (std::int64_t r = 0; r < hp::npix(ns); ++r) {
        CAPTURE(n);
        CAPTURE(r);
        CHECK(hp::ring_to_nest(ns, r) == order[r]);
        CHECK(hp::nest_to_ring(ns, order[r]) == r);
      }
    }
  }

  TEST_CASE("nest/ring are mutually inverse permutations") {
    for (const std::int64_t n : {1, 2, 4, 8, 16, 64}) {
      const hp::NSide ns(n);
      std::vector<std::uint8_t> seen(static_cast<std::size_t>(hp::npix(ns)), 0);
      for (std::int64_t p = 0; p < hp::npix(ns); ++p) {
        const std::int64_t r = hp::nest_to_ring(ns, p);
        REQUIRE(r >= 0);
        REQUIRE(r < hp::npix(ns));
        seen[r] = 1;
        CHECK(hp::ring_to_nest(ns, r) == p);
      }
      CHECK(std::count(seen.begin(), seen.end(), 1) == hp::npix(ns));
    }
  }

  TEST_CASE("pixel index range is enforced") {
    CHECK_THROWS_AS(hp::nest_to_ring(hp::NSide(2), 48), std::out_of_range);
    CHECK_THROWS_AS(hp::ring_to_nest(hp::NSide(2), -1), std::out_of_range);
    CHECK_THROWS_AS(hp::pix_to_ang(hp::NSide(1), 12, hp::Scheme::ring), std::out_of_range);
  }

  TEST_CASE("first ring pixel centres at nside 1") {
    const hp::NSide ns(1);
    const auto a0 = hp::pix_to_ang(ns, 0, hp::Scheme::ring);
    CHECK(a0.theta == doctest::Approx(std::acos(2.0 / 3.0)).epsilon(1e-12));
    CHECK(a0.phi == doctest::Approx(hp::kPi / 4).epsilon(1e-12));
    const auto a4 = hp::pix_to_ang(ns, 4, hp::Scheme::ring);
    CHECK(a4.theta == doctest::Approx(hp::kPi / 2).epsilon(1e-12));
  }

  TEST_CASE("nested and ring centre paths agree") {
    // pix_to_ang(nested) runs through face coordinates, pix_to_ang(ring)
    // through ring arithmetic; they must describe the same pixel.
    for (const std::int64_t n : {2, 8, 32}) {
      const hp::NSide ns(n);
      for (std::int64_t p = 0; p < hp::npix(ns); ++p) {
        const auto an = hp::pix_to_ang(ns, p, hp::Scheme::nested);
        const auto ar = hp::pix_to_ang(ns, hp::nest_to_ring(ns, p), hp::Scheme::ring);
        CHECK(an.theta == doctest::Approx(ar.theta).epsilon(1e-12));
        CHECK(an.phi == doctest::Approx(ar.phi).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("iso-latitude: ring neighbours share theta") {
    const hp::NSide ns(8);
    double prev_theta = -1.0;
    std::int64_t rings = 0;
    for (std::int64_t r = 0; r < hp::npix(ns); ++r) {
      const auto a = hp::pix_to_ang(ns, r, hp::Scheme::ring);
      if (a.theta != prev_theta) {
        CHECK(a.theta > prev_theta);  // strictly south of the previous ring
        prev_theta = a.theta;
        ++rings;
      }
    }
    CHECK(rings == 4 * 8 - 1);
  }

  TEST_CASE("ang_to_pix recovers every pixel centre") {
    for (const std::int64_t n : {1, 2, 4, 8, 16, 64}) {
      const hp::NSide ns(n);
      for (std::int64_t p = 0; p < hp::npix(ns); ++p) {
        CHECK(hp::ang_to_pix(ns, hp::pix_to_ang(ns, p, hp::Scheme::ring), hp::Scheme::ring) == p);
        CHECK(hp::ang_to_pix(ns, hp::pix_to_ang(ns, p, hp::Scheme::nested),
                             hp::Scheme::nested) == p);
      }
    }
  }

  TEST_CASE("poles map deterministically into the closest ring") {
    const hp::NSide ns(8);
    const auto north = hp::ang_to_pix(ns, {0.0, 0.3}, hp::Scheme::ring);
    CHECK(north >= 0);
    CHECK(north < 4);  // first ring has 4 pixels
    const auto south = hp::ang_to_pix(ns, {hp::kPi, 5.9}, hp::Scheme::ring);
    CHECK(south >= hp::npix(ns) - 4);
    const auto equator = hp::ang_to_pix(ns, {hp::kPi / 2, 0.0}, hp::Scheme::nested);
    CHECK(hp::base_pixel(ns, equator) >= 4);
    CHECK(hp::base_pixel(ns, equator) <= 7);
  }

  TEST_CASE("equal area: uniform points hit pixels uniformly") {
    const hp::NSide ns(8);
    const std::int64_t n_pix = hp::npix(ns);
    const std::int64_t n_samples = 1000000;
    std::vector<std::int64_t> hits(static_cast<std::size_t>(n_pix), 0);
    std::mt19937_64 rng(20240817u);
    std::uniform_real_distribution<double> uz(-1.0, 1.0);
    std::uniform_real_distribution<double> uphi(0.0, 2 * hp::kPi);
    for (std::int64_t i = 0; i < n_samples; ++i) {
      const double z = uz(rng);
      ++hits[hp::ang_to_pix(ns, {std::acos(z), uphi(rng)}, hp::Scheme::ring)];
    }
    const double p = 1.0 / static_cast<double>(n_pix);
    const double mean = static_cast<double>(n_samples) * p;
    const double sigma = std::sqrt(static_cast<double>(n_samples) * p * (1.0 - p));
    for (std::int64_t i = 0; i < n_pix; ++i) {
      CAPTURE(i);
      CHECK(std::fabs(static_cast<double>(hits[i]) - mean) < 5.0 * sigma);
    }
  }

  TEST_CASE("base_pixel is the nested prefix") {
    CHECK(hp::base_pixel(hp::NSide(2), 5) == 1);
    CHECK(hp::base_pixel(hp::NSide(256), 524287) == 7);
    for (std::int64_t k = 0; k < 12; ++k) CHECK(hp::base_pixel(hp::NSide(1), k) == k);
  }

  TEST_CASE("local_xy de-interleaves the nested suffix") {
    const auto fc = hp::local_xy(hp::NSide(4), 5);  // bits 0101
    CHECK(fc.face == 0);
    CHECK(fc.x == 3);
    CHECK(fc.y == 0);
    const auto origin = hp::local_xy(hp::NSide(2), 0);
    CHECK(origin.face == 0);
    CHECK(origin.x == 0);
    CHECK(origin.y == 0);
  }

  TEST_CASE("local_xy is a bijection with nested indices") {
    for (const std::int64_t n : {2, 4, 8}) {
      const hp::NSide ns(n);
      for (std::int64_t p = 0; p < hp::npix(ns); ++p) {
        const auto fc = hp::local_xy(ns, p);
        CHECK(fc.x >= 0);
        CHECK(fc.x < n);
        CHECK(fc.y >= 0);
        CHECK(fc.y < n);
        CHECK(hp::nested_from_xy(ns, fc) == p);
      }
    }
  }

  TEST_CASE("local_xy tracks the Z-order curve within a face") {
    // brute-force enumeration of the 2-bit interleave on a 4x4 face
    const hp::NSide ns(4);
    std::int64_t p = 0;
    for (std::int64_t y = 0; y < 4; ++y)
      for (std::int64_t x = 0; x < 4; ++x) {
        const std::int64_t nested =
            static_cast<std::int64_t>(hp::interleave_bits(static_cast<std::uint64_t>(x),
                                                          static_cast<std::uint64_t>(y)));
        const auto fc = hp::local_xy(ns, nested);
        CHECK(fc.x == x);
        CHECK(fc.y == y);
        ++p;
      }
  }

  TEST_CASE("child_range tiles the fine grid") {
    CHECK(hp::child_range(hp::NSide(1), 0, hp::NSide(2)) == std::pair<std::int64_t, std::int64_t>{0, 4});
    CHECK(hp::child_range(hp::NSide(64), 10, hp::NSide(256)) ==
          std::pair<std::int64_t, std::int64_t>{160, 176});
    const hp::NSide coarse(2), fine(8);
    std::int64_t expect = 0;
    for (std::int64_t p = 0; p < hp::npix(coarse); ++p) {
      const auto [lo, hi] = hp::child_range(coarse, p, fine);
      CHECK(lo == expect);
      expect = hi;
    }
    CHECK(expect == hp::npix(fine));
    CHECK_THROWS_AS(hp::child_range(hp::NSide(4), 0, hp::NSide(4)), std::invalid_argument);
  }
}
