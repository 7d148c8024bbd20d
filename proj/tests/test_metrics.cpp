#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "healswin/metrics.hpp"
#include "healswin/tensor.hpp"

using namespace healswin;
using metrics::PointCloud;

namespace {

// O(|P| * |Q|) oracle, independent of the spatial-hash implementation
double chamfer_bruteforce(const PointCloud& a, const PointCloud& b) {
  auto directed = [](const PointCloud& from, const PointCloud& to) {
    double acc = 0.0;
    for (const auto& p : from.points) {
      double best = std::numeric_limits<double>::max();
      for (const auto& q : to.points) {
        const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      acc += best;
    }
    return acc / static_cast<double>(from.points.size());
  };
  return directed(a, b) + directed(b, a);
}

PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, double scale = 10.0) {
  PointCloud c;
  std::uniform_real_distribution<double> dist(-scale, scale);
  c.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({dist(rng), dist(rng), dist(rng)});
  return c;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("class weights follow the quarter-power rule") {
    const auto w = metrics::class_weights({16, 1, 0, 256});
    CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(w[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w[2] == 0.0);  // absent class
    CHECK(w[3] == doctest::Approx(0.25).epsilon(1e-12));
  }

  TEST_CASE("weighted cross entropy closed forms") {
    const int C = 5;
    const std::int64_t n = 8;
    std::vector<float> uniform(n * C, 0.f);
    std::vector<std::int32_t> labels(n);
    for (std::int64_t i = 0; i < n; ++i) labels[i] = static_cast<std::int32_t>(i % C);
    const std::vector<double> w(C, 1.0);
    CHECK(metrics::weighted_cross_entropy(uniform, n, C, labels, w, {}) ==
          doctest::Approx(std::log(double(C))).epsilon(1e-6));

    std::vector<float> confident(n * C, -50.f);
    for (std::int64_t i = 0; i < n; ++i) confident[i * C + labels[i]] = 50.f;
    CHECK(metrics::weighted_cross_entropy(confident, n, C, labels, w, {}) ==
          doctest::Approx(0.0).epsilon(1e-6));
  }

  TEST_CASE("plain and tape cross entropies agree on random inputs") {
    std::mt19937_64 rng(5);
    const int C = 4;
    const std::int64_t n = 20;
    std::vector<float> logits(n * C);
    std::uniform_real_distribution<float> dist(-2.f, 2.f);
    for (auto& v : logits) v = dist(rng);
    std::vector<std::int32_t> labels(n);
    std::vector<std::uint8_t> valid(n, 1);
    for (auto& l : labels) l = std::uniform_int_distribution<int>(0, C - 1)(rng);
    valid[3] = valid[11] = 0;
    const std::vector<double> weights = {0.5, 1.0, 2.0, 0.25};

    const double plain = metrics::weighted_cross_entropy(logits, n, C, labels, weights, valid);

    ad::Tape<float> t;
    auto arr = ad::Array<float>::zeros({n, C});
    arr.v = logits;
    std::vector<float> roww(n, 0.f);
    std::int64_t count = 0;
    for (std::int64_t i = 0; i < n; ++i)
      if (valid[i]) {
        roww[i] = static_cast<float>(weights[labels[i]]);
        ++count;
      } else {
        labels[i] = -1;
      }
    const auto loss = t.cross_entropy_rows(t.constant(std::move(arr)), labels, roww,
                                           1.0f / static_cast<float>(count));
    CHECK(static_cast<double>(t.value(loss)[0]) == doctest::Approx(plain).epsilon(1e-5));
  }

  TEST_CASE("depth loss in standardized units") {
    const metrics::DepthStats stats{10.0, 2.0};
    std::vector<float> gt = {8.f, 10.f, 12.f, 14.f};
    std::vector<float> same = gt;
    CHECK(metrics::depth_l2_loss(same, gt, {}, {}, stats) == 0.0);

    std::vector<float> offset = {9.f, 11.f, 13.f, 15.f};  // +1 meter = +0.5 standardized
    CHECK(metrics::depth_l2_loss(offset, gt, {}, {}, stats) ==
          doctest::Approx(0.25).epsilon(1e-12));

    // sky-masked pixels do not contribute
    std::vector<float> wrong_at_sky = {8.f, 10.f, 12.f, 99.f};
    const std::vector<std::uint8_t> sky = {0, 0, 0, 1};
    CHECK(metrics::depth_l2_loss(wrong_at_sky, gt, sky, {}, stats) == 0.0);
    CHECK(metrics::depth_l2_loss(wrong_at_sky, gt, {}, {}, stats) > 0.0);
    CHECK_THROWS_AS(metrics::depth_l2_loss(same, gt, {1, 1, 1, 1}, {}, stats),
                    std::invalid_argument);
  }

  TEST_CASE("iou identities") {
    const std::vector<std::int32_t> gt = {0, 0, 1, 1, 2, 2};
    const auto perfect = metrics::intersection_over_union(gt, gt, {}, 3, {});
    CHECK(perfect.miou == 1.0);

    const std::vector<std::int32_t> binary_gt = {0, 1, 0, 1};
    const std::vector<std::int32_t> inverted = {1, 0, 1, 0};
    CHECK(metrics::intersection_over_union(inverted, binary_gt, {}, 2, {}).miou == 0.0);
  }

  TEST_CASE("iou thirds: half of one class moved symmetrically") {
    // gt: 4 of class 0, 4 of class 1; prediction swaps half of each
    const std::vector<std::int32_t> gt = {0, 0, 0, 0, 1, 1, 1, 1};
    const std::vector<std::int32_t> pr = {0, 0, 1, 1, 1, 1, 0, 0};
    const auto rep = metrics::intersection_over_union(pr, gt, {}, 2, {});
    // per class: TP=2, FP=2, FN=2 -> 2/6
    CHECK(rep.per_class[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(rep.per_class[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(rep.miou == doctest::Approx(1.0 / 3).epsilon(1e-12));
  }

  TEST_CASE("iou skips absent classes and honors excludes") {
    const std::vector<std::int32_t> gt = {0, 0, 1, 1};
    const std::vector<std::int32_t> pr = {0, 1, 1, 1};
    const auto rep = metrics::intersection_over_union(pr, gt, {}, 4, {0});
    CHECK(rep.skipped == std::vector<std::int64_t>{2, 3});
    CHECK(std::isnan(rep.per_class[2]));
    // class 0 excluded from the mean: only class 1 counts
    CHECK(rep.miou == doctest::Approx(2.0 / 3).epsilon(1e-12));
  }

  TEST_CASE("iou is invariant under consistent relabeling") {
    std::mt19937_64 rng(17);
    std::vector<std::int32_t> gt(200), pr(200);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      gt[i] = std::uniform_int_distribution<int>(0, 3)(rng);
      pr[i] = std::uniform_int_distribution<int>(0, 3)(rng);
    }
    const int perm[4] = {2, 0, 3, 1};
    std::vector<std::int32_t> gt2(gt.size()), pr2(pr.size());
    for (std::size_t i = 0; i < gt.size(); ++i) {
      gt2[i] = perm[gt[i]];
      pr2[i] = perm[pr[i]];
    }
    const auto a = metrics::intersection_over_union(pr, gt, {}, 4, {});
    const auto b = metrics::intersection_over_union(pr2, gt2, {}, 4, {});
    CHECK(a.miou == doctest::Approx(b.miou).epsilon(1e-12));
  }

  TEST_CASE("flat miou equals raster miou under full coverage") {
    ImageRaster gt = ImageRaster::zeros(8, 4, 1);
    ImageRaster pr = ImageRaster::zeros(8, 4, 1);
    std::mt19937_64 rng(23);
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
      gt.data[i] = static_cast<float>(std::uniform_int_distribution<int>(0, 2)(rng));
      pr.data[i] = static_cast<float>(std::uniform_int_distribution<int>(0, 2)(rng));
    }
    const std::vector<std::uint8_t> full(gt.data.size(), 1);
    const auto with_mask = metrics::flat_miou(pr, gt, full, 3, {});
    const auto no_mask = metrics::flat_miou(pr, gt, {}, 3, {});
    CHECK(with_mask.miou == no_mask.miou);

    // masking out all erroneous pixels lifts the score to 1
    std::vector<std::uint8_t> only_correct(gt.data.size());
    for (std::size_t i = 0; i < gt.data.size(); ++i) only_correct[i] = gt.data[i] == pr.data[i];
    CHECK(metrics::flat_miou(pr, gt, only_correct, 3, {}).miou == 1.0);

    CHECK_THROWS_AS(metrics::flat_miou(pr, gt, std::vector<std::uint8_t>(gt.data.size(), 0), 3, {}),
                    std::invalid_argument);
  }

  TEST_CASE("point cloud lifting") {
    HealpixMap depth = HealpixMap::zeros(2, 8, 1);
    for (auto& v : depth.data) v = 3.0f;
    const auto lift = metrics::depth_to_pointcloud(depth, {});
    REQUIRE(lift.cloud.points.size() == static_cast<std::size_t>(depth.num_pixels()));
    for (const auto& p : lift.cloud.points) {
      const double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
      CHECK(r == doctest::Approx(3.0).epsilon(1e-12));
    }

    // masking removes exactly the flagged pixels
    std::vector<std::uint8_t> valid(static_cast<std::size_t>(depth.num_pixels()), 1);
    valid[0] = valid[7] = 0;
    CHECK(metrics::depth_to_pointcloud(depth, valid).cloud.points.size() ==
          static_cast<std::size_t>(depth.num_pixels() - 2));

    // negative depths clamp to zero and are counted
    depth.data[3] = -1.f;
    const auto clamped = metrics::depth_to_pointcloud(depth, {});
    CHECK(clamped.clamped_negative == 1);
  }

  TEST_CASE("raster lifting puts the optical axis at +z") {
    const auto cal = fisheye::default_camera(33, 33);  // odd size: centre pixel on the axis
    ImageRaster depth = ImageRaster::zeros(33, 33, 1);
    for (auto& v : depth.data) v = 1.0f;
    const auto lift = metrics::depth_to_pointcloud(depth, cal, {});
    bool found_axis = false;
    for (const auto& p : lift.cloud.points)
      if (std::fabs(p[0]) < 1e-9 && std::fabs(p[1]) < 1e-9)
        found_axis = p[2] == doctest::Approx(1.0).epsilon(1e-12);
    CHECK(found_axis);
  }

  TEST_CASE("chamfer identities") {
    std::mt19937_64 rng(31);
    const auto p = random_cloud(rng, 50);
    CHECK(metrics::chamfer(p, p) == 0.0);

    PointCloud a, b;
    a.points.push_back({0, 0, 0});
    b.points.push_back({1, 0, 0});
    CHECK(metrics::chamfer(a, b) == 2.0);

    const auto q = random_cloud(rng, 70);
    CHECK(metrics::chamfer(p, q) == metrics::chamfer(q, p));
    CHECK(metrics::chamfer(p, q) >= 0.0);
    CHECK_THROWS_AS(metrics::chamfer(PointCloud{}, p), std::invalid_argument);
  }

  TEST_CASE("spatial hash agrees with brute force") {
    std::mt19937_64 rng(37);
    for (int trial = 0; trial < 12; ++trial) {
      const std::size_t na = 1 + static_cast<std::size_t>(std::pow(10.0, 1 + 0.2 * (trial % 10)));
      const std::size_t nb = 1 + static_cast<std::size_t>(std::pow(10.0, 1 + 0.17 * trial));
      const auto a = random_cloud(rng, na, trial % 3 == 0 ? 0.5 : 20.0);
      auto b = random_cloud(rng, nb, 20.0);
      if (trial % 4 == 0) b.points[0] = {500, 500, 500};  // far outlier
      const double fast = metrics::chamfer(a, b);
      const double slow = chamfer_bruteforce(a, b);
      CHECK(std::fabs(fast - slow) <= 1e-6 * std::max(1.0, std::fabs(slow)));
    }
  }

  TEST_CASE("depth stats standardize the training split") {
    HealpixMap d1 = HealpixMap::zeros(2, 8, 1);
    HealpixMap d2 = HealpixMap::zeros(2, 8, 1);
    for (std::int64_t i = 0; i < d1.num_pixels(); ++i) {
      d1.at(i, 0) = 4.f;
      d2.at(i, 0) = 8.f;
    }
    std::vector<std::uint8_t> no_sky(static_cast<std::size_t>(d1.num_pixels()), 0);
    const auto stats = metrics::compute_depth_stats({&d1, &d2}, {&no_sky, &no_sky});
    CHECK(stats.mean == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(stats.std == doctest::Approx(2.0).epsilon(1e-9));
  }
}
