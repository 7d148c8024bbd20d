#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "healswin/grid_plan.hpp"

using namespace healswin;

namespace {

bool is_permutation_of_range(const std::vector<std::int64_t>& v) {
  std::vector<std::uint8_t> seen(v.size(), 0);
  for (const auto x : v) {
    if (x < 0 || x >= static_cast<std::int64_t>(v.size()) || seen[x]) return false;
    seen[x] = 1;
  }
  return true;
}

std::vector<double> apply_gather(const std::vector<double>& x,
                                 const std::vector<std::int64_t>& idx) {
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = x[idx[i]];
  return out;
}

// ring position of every patch, by brute-force sort of full-sphere ring
// indices
std::vector<std::int64_t> ring_positions(const plan::PatchGrid& g) {
  const hp::NSide ns(g.nside);
  std::vector<std::int64_t> by_ring(g.length());
  std::iota(by_ring.begin(), by_ring.end(), 0);
  std::stable_sort(by_ring.begin(), by_ring.end(), [&](std::int64_t a, std::int64_t b) {
    return hp::nest_to_ring(ns, a) < hp::nest_to_ring(ns, b);
  });
  std::vector<std::int64_t> pos(g.length());
  for (std::int64_t i = 0; i < g.length(); ++i) pos[by_ring[i]] = i;
  return pos;
}

}  // namespace

TEST_SUITE("grid_plan") {
  TEST_CASE("subset keeps the first eight base pixels") {
    CHECK(plan::subset_base8(hp::NSide(256)).second == 524288);
    CHECK(plan::subset_base8(hp::NSide(1)) == std::pair<std::int64_t, std::int64_t>{0, 8});
    // nested ordering groups indices by base pixel
    const hp::NSide ns(4);
    for (std::int64_t p = 0; p < plan::subset_base8(ns).second; ++p)
      CHECK(hp::base_pixel(ns, p) <= 7);
  }

  TEST_CASE("build_patches scales nside by the patch edge") {
    const auto g = plan::build_patches(hp::NSide(256), 4, 8);
    CHECK(g.nside == 128);
    CHECK(g.length() == 131072);

    const auto identity = plan::build_patches(hp::NSide(16), 1, 8);
    CHECK(identity.length() == 8 * 16 * 16);

    const auto g16 = plan::build_patches(hp::NSide(16), 16, 8);
    CHECK(g16.nside == 4);
    CHECK(g16.length() == 128);

    CHECK_THROWS_AS(plan::build_patches(hp::NSide(16), 8, 8), std::invalid_argument);
    CHECK_THROWS_AS(plan::build_patches(hp::NSide(2), 16, 8), std::invalid_argument);
  }

  TEST_CASE("window partitions tile the patch list") {
    const auto g = plan::build_patches(hp::NSide(256), 4, 8);
    CHECK(plan::partition_windows(g, 64).num_windows == 2048);

    const auto pixels = plan::build_patches(hp::NSide(256), 1, 8);
    CHECK(plan::partition_windows(pixels, 64).num_windows == 8192);

    const auto g4 = plan::build_patches(hp::NSide(16), 16, 8);
    CHECK(plan::partition_windows(g4, 64).num_windows == 2);

    CHECK_THROWS_AS(plan::partition_windows(g4, 7), std::invalid_argument);
    CHECK_THROWS_AS(plan::partition_windows(g4, 16384), std::invalid_argument);
    // a single global window is the one allowed non-power-of-four case
    CHECK(plan::partition_windows(g4, g4.length()).num_windows == 1);
  }

  TEST_CASE("merge and expand mirror each other") {
    auto g = plan::build_patches(hp::NSide(256), 4, 8);
    const auto m1 = plan::merge_index(g);
    CHECK(m1.length() == 32768);
    const auto m2 = plan::merge_index(plan::merge_index(m1));
    CHECK(m2.length() == 2048);
    CHECK(plan::partition_windows(m2, 64).num_windows / m2.num_faces == 4);

    const auto e = plan::expand_index(m2);
    CHECK(e.length() == 8192);
    CHECK(plan::expand_index(plan::expand_index(e)).length() == 131072);

    const auto round = plan::expand_index(plan::merge_index(g));
    CHECK(round.nside == g.nside);
    CHECK(round.patch_size == g.patch_size);

    plan::PatchGrid bottom{1, 4, 8};
    CHECK_THROWS_AS(plan::merge_index(bottom), std::invalid_argument);
  }

  TEST_CASE("spiral plan is a permutation with exact roll semantics") {
    for (const std::int64_t nside : {4, 8}) {
      const auto g = plan::build_patches(hp::NSide(2 * nside), 4, 8);
      REQUIRE(g.nside == nside);
      const auto pos = ring_positions(g);
      for (const std::int64_t shift : {1, 4, 17}) {
        const auto p = plan::spiral_shift_plan(g, shift);
        CHECK(is_permutation_of_range(p.forward));
        CHECK(is_permutation_of_range(p.inverse));
        for (std::int64_t i = 0; i < g.length(); ++i) {
          CHECK(p.forward[p.inverse[i]] == i);
          CHECK(p.inverse[p.forward[i]] == i);
        }
        // every patch's ring position advances by exactly `shift`
        for (std::int64_t i = 0; i < g.length(); ++i) {
          const std::int64_t src = p.forward[i];
          CHECK(pos[i] == (pos[src] + shift) % g.length());
        }
      }
    }
  }

  TEST_CASE("spiral shift zero is the identity with a single origin group") {
    const auto g = plan::build_patches(hp::NSide(8), 4, 8);
    const auto p = plan::spiral_shift_plan(g, 0);
    CHECK_FALSE(p.masked);
    for (std::int64_t i = 0; i < g.length(); ++i) {
      CHECK(p.forward[i] == i);
      CHECK(p.origin_group[i] == 0);
    }
    CHECK_THROWS_AS(plan::spiral_shift_plan(g, g.length()), std::invalid_argument);
    CHECK_THROWS_AS(plan::spiral_shift_plan(g, -1), std::invalid_argument);
  }

  TEST_CASE("spiral shifts compose additively") {
    const auto g = plan::build_patches(hp::NSide(8), 4, 8);
    const std::int64_t n = g.length();
    std::mt19937_64 rng(7);
    std::vector<double> x(static_cast<std::size_t>(n));
    for (auto& v : x) v = std::uniform_real_distribution<double>(-1, 1)(rng);

    for (const auto [s1, s2] : {std::pair<std::int64_t, std::int64_t>{1, 4},
                                {4, 17},
                                {31, n - 5}}) {
      const auto p1 = plan::spiral_shift_plan(g, s1);
      const auto p2 = plan::spiral_shift_plan(g, s2);
      const auto p12 = plan::spiral_shift_plan(g, (s1 + s2) % n);
      const auto two_step = apply_gather(apply_gather(x, p1.forward), p2.forward);
      const auto one_step = apply_gather(x, p12.forward);
      CHECK(two_step == one_step);
    }
  }

  TEST_CASE("spiral wrap group marks exactly the rolled-in patches") {
    const auto g = plan::build_patches(hp::NSide(8), 4, 8);
    const std::int64_t shift = 12;
    const auto p = plan::spiral_shift_plan(g, shift);
    const auto pos = ring_positions(g);
    std::int64_t wrapped = 0;
    for (std::int64_t i = 0; i < g.length(); ++i) {
      CHECK(p.origin_group[i] == (pos[i] < shift ? 1 : 0));
      wrapped += p.origin_group[i];
    }
    CHECK(wrapped == shift);
  }

  TEST_CASE("grid plan rolls each face without crossing base pixels") {
    const auto g = plan::build_patches(hp::NSide(8), 4, 8);  // patch nside 4
    for (const std::int64_t shift : {1, 2}) {
      const auto p = plan::grid_shift_plan(g, shift);
      CHECK(is_permutation_of_range(p.forward));
      for (std::int64_t i = 0; i < g.length(); ++i) {
        CHECK(p.inverse[p.forward[i]] == i);
        CHECK(i / (g.nside * g.nside) == p.forward[i] / (g.nside * g.nside));
      }
    }

    // face-0 patch at (3,3) lands on (1,1) with a wrapped origin group
    const auto p2 = plan::grid_shift_plan(g, 2);
    const hp::NSide pn(4);
    const auto src = hp::nested_from_xy(pn, {0, 3, 3});
    const auto dst = hp::nested_from_xy(pn, {0, 1, 1});
    CHECK(p2.forward[dst] == src);
    CHECK(p2.origin_group[dst] == 3);  // wrapped in both axes
    CHECK(p2.origin_group[hp::nested_from_xy(pn, {0, 3, 3})] == 0);

    CHECK_THROWS_AS(plan::grid_shift_plan(g, 4), std::invalid_argument);
    const auto identity = plan::grid_shift_plan(g, 0);
    for (std::int64_t i = 0; i < g.length(); ++i) CHECK(identity.forward[i] == i);
  }

  TEST_CASE("plan round trip restores features elementwise") {
    const auto g = plan::build_patches(hp::NSide(8), 4, 8);
    std::mt19937_64 rng(99);
    std::vector<double> x(static_cast<std::size_t>(g.length()));
    for (auto& v : x) v = std::uniform_real_distribution<double>(-10, 10)(rng);
    for (const auto strategy : {plan::ShiftStrategy::spiral, plan::ShiftStrategy::grid}) {
      const auto p = strategy == plan::ShiftStrategy::spiral ? plan::spiral_shift_plan(g, 3)
                                                             : plan::grid_shift_plan(g, 3);
      CHECK(apply_gather(apply_gather(x, p.forward), p.inverse) == x);
    }
  }

  TEST_CASE("attention masks are symmetric group-equality tables") {
    const auto g = plan::build_patches(hp::NSide(8), 4, 8);
    const auto part = plan::partition_windows(g, 16);

    const auto unshifted = plan::spiral_shift_plan(g, 0);
    const auto mask0 = plan::attention_mask(unshifted, part);
    CHECK(std::all_of(mask0.attend.begin(), mask0.attend.end(),
                      [](std::uint8_t v) { return v == 1; }));

    const auto p = plan::spiral_shift_plan(g, 7);
    const auto mask = plan::attention_mask(p, part);
    for (std::int64_t w = 0; w < part.num_windows; ++w) {
      // block structure: a^2 + b^2 true entries for group sizes a, b
      std::int64_t a = 0;
      for (std::int64_t i = 0; i < 16; ++i) a += p.origin_group[w * 16 + i] == 0;
      const std::int64_t b = 16 - a;
      std::int64_t trues = 0;
      for (std::int64_t i = 0; i < 16; ++i) {
        CHECK(mask.at(w, i, i));
        for (std::int64_t j = 0; j < 16; ++j) {
          trues += mask.at(w, i, j);
          CHECK(mask.at(w, i, j) == mask.at(w, j, i));
        }
      }
      CHECK(trues == a * a + b * b);
    }

    plan::PatchGrid other{2, 4, 8};
    CHECK_THROWS_AS(plan::attention_mask(p, plan::partition_windows(other, 16)),
                    std::invalid_argument);
  }

  TEST_CASE("cached plans are shared") {
    const auto g = plan::build_patches(hp::NSide(8), 4, 8);
    const auto a = plan::cached_plan(g, plan::ShiftStrategy::spiral, 4);
    const auto b = plan::cached_plan(g, plan::ShiftStrategy::spiral, 4);
    CHECK(a.get() == b.get());
    const auto c = plan::cached_plan(g, plan::ShiftStrategy::grid, 2);
    CHECK(a.get() != c.get());
  }
}
