#include "healswin/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include "healswin/healpix.hpp"
#include "healswin/threading.hpp"

namespace healswin::metrics {

std::vector<double> class_weights(const std::vector<std::int64_t>& counts) {
  std::vector<double> w(counts.size(), 0.0);
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (counts[i] > 0) w[i] = std::pow(static_cast<double>(counts[i]), -0.25);
  return w;
}

double weighted_cross_entropy(const std::vector<float>& logits, std::int64_t n, int num_classes,
                              const std::vector<std::int32_t>& labels,
                              const std::vector<double>& weights,
                              const std::vector<std::uint8_t>& valid) {
  if (static_cast<std::int64_t>(logits.size()) != n * num_classes ||
      static_cast<std::int64_t>(labels.size()) != n)
    throw std::invalid_argument("weighted_cross_entropy: shape mismatch");
  double loss = 0.0;
  std::int64_t count = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (!valid.empty() && !valid[i]) continue;
    const std::int32_t lab = labels[i];
    if (lab < 0 || lab >= num_classes)
      throw std::out_of_range("weighted_cross_entropy: label out of range");
    const float* row = logits.data() + i * num_classes;
    double m = row[0];
    for (int c = 1; c < num_classes; ++c) m = std::max(m, static_cast<double>(row[c]));
    double s = 0.0;
    for (int c = 0; c < num_classes; ++c) s += std::exp(static_cast<double>(row[c]) - m);
    loss += weights[lab] * (m + std::log(s) - static_cast<double>(row[lab]));
    ++count;
  }
  if (count == 0) throw std::invalid_argument("weighted_cross_entropy: no valid pixels");
  return loss / static_cast<double>(count);
}

DepthStats compute_depth_stats(const std::vector<const HealpixMap*>& depth_maps,
                               const std::vector<const std::vector<std::uint8_t>*>& sky_masks) {
  double sum = 0.0, sum_sq = 0.0;
  std::int64_t n = 0;
  for (std::size_t m = 0; m < depth_maps.size(); ++m) {
    const HealpixMap& d = *depth_maps[m];
    const auto* sky = m < sky_masks.size() ? sky_masks[m] : nullptr;
    for (std::int64_t i = 0; i < d.num_pixels(); ++i) {
      if (!d.valid(i)) continue;
      if (sky && !sky->empty() && (*sky)[i]) continue;
      const double v = d.at(i, 0);
      sum += v;
      sum_sq += v * v;
      ++n;
    }
  }
  if (n < 2) throw std::invalid_argument("compute_depth_stats: fewer than two depth samples");
  DepthStats st;
  st.mean = sum / static_cast<double>(n);
  const double var = sum_sq / static_cast<double>(n) - st.mean * st.mean;
  st.std = std::sqrt(std::max(var, 1e-12));
  return st;
}

double depth_l2_loss(const std::vector<float>& pred, const std::vector<float>& gt,
                     const std::vector<std::uint8_t>& sky_mask,
                     const std::vector<std::uint8_t>& valid, const DepthStats& stats) {
  if (pred.size() != gt.size()) throw std::invalid_argument("depth_l2_loss: shape mismatch");
  double acc = 0.0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!sky_mask.empty() && sky_mask[i]) continue;
    if (!valid.empty() && !valid[i]) continue;
    const double d = (static_cast<double>(pred[i]) - static_cast<double>(gt[i])) / stats.std;
    acc += d * d;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("depth_l2_loss: no valid pixels");
  return acc / static_cast<double>(n);
}

IouReport intersection_over_union(const std::vector<std::int32_t>& pred,
                                  const std::vector<std::int32_t>& gt,
                                  const std::vector<std::uint8_t>& valid, int num_classes,
                                  const std::set<int>& exclude) {
  if (pred.size() != gt.size()) throw std::invalid_argument("iou: prediction/truth size mismatch");
  std::vector<std::int64_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!valid.empty() && !valid[i]) continue;
    const std::int32_t p = pred[i], g = gt[i];
    if (p < 0 || p >= num_classes || g < 0 || g >= num_classes)
      throw std::out_of_range("iou: label out of range");
    if (p == g) {
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  IouReport rep;
  rep.per_class.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < num_classes; ++c) {
    const std::int64_t denom = tp[c] + fp[c] + fn[c];
    if (denom == 0) {
      rep.skipped.push_back(c);
      continue;
    }
    rep.per_class[c] = static_cast<double>(tp[c]) / static_cast<double>(denom);
    if (exclude.count(c)) continue;
    sum += rep.per_class[c];
    ++used;
  }
  rep.miou = used > 0 ? sum / used : 0.0;
  return rep;
}

namespace {

std::vector<std::int32_t> labels_of(const float* data, std::int64_t n, int stride) {
  std::vector<std::int32_t> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    out[i] = static_cast<std::int32_t>(std::lround(data[i * stride]));
  return out;
}

}  // namespace

IouReport spherical_miou(const HealpixMap& pred_labels, const HealpixMap& gt_labels,
                         const std::set<int>& exclude, int num_classes) {
  if (pred_labels.nside != gt_labels.nside || pred_labels.num_faces != gt_labels.num_faces)
    throw std::invalid_argument("spherical_miou: grids differ");
  const std::int64_t n = pred_labels.num_pixels();
  std::vector<std::uint8_t> valid(static_cast<std::size_t>(n), 1);
  for (std::int64_t i = 0; i < n; ++i)
    valid[i] = pred_labels.valid(i) && gt_labels.valid(i);
  return intersection_over_union(labels_of(pred_labels.data.data(), n, pred_labels.channels),
                                 labels_of(gt_labels.data.data(), n, gt_labels.channels), valid,
                                 num_classes, exclude);
}

IouReport flat_miou(const ImageRaster& pred, const ImageRaster& gt,
                    const std::vector<std::uint8_t>& coverage, int num_classes,
                    const std::set<int>& exclude) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw std::invalid_argument("flat_miou: raster sizes differ");
  const std::int64_t n = static_cast<std::int64_t>(pred.width) * pred.height;
  if (!coverage.empty() && static_cast<std::int64_t>(coverage.size()) != n)
    throw std::invalid_argument("flat_miou: coverage mask size mismatch");
  if (!coverage.empty() &&
      std::none_of(coverage.begin(), coverage.end(), [](std::uint8_t v) { return v != 0; }))
    throw std::invalid_argument("flat_miou: empty coverage");
  return intersection_over_union(labels_of(pred.data.data(), n, pred.channels),
                                 labels_of(gt.data.data(), n, gt.channels), coverage, num_classes,
                                 exclude);
}

LiftResult depth_to_pointcloud(const HealpixMap& depth, const std::vector<std::uint8_t>& valid) {
  const hp::NSide ns(depth.nside);
  LiftResult out;
  out.cloud.points.reserve(static_cast<std::size_t>(depth.num_pixels()));
  for (std::int64_t i = 0; i < depth.num_pixels(); ++i) {
    if (!valid.empty() && !valid[i]) continue;
    if (!depth.valid(i)) continue;
    double d = depth.at(i, 0);
    if (d < 0) {
      d = 0;
      ++out.clamped_negative;
    }
    const auto ang = hp::pix_to_ang(ns, i, hp::Scheme::nested);
    const double st = std::sin(ang.theta);
    out.cloud.points.push_back(
        {d * st * std::cos(ang.phi), d * st * std::sin(ang.phi), d * std::cos(ang.theta)});
  }
  return out;
}

LiftResult depth_to_pointcloud(const ImageRaster& depth, const fisheye::CameraCalibration& cal,
                               const std::vector<std::uint8_t>& valid) {
  const fisheye::RadiusInverter inv(cal);
  LiftResult out;
  for (int y = 0; y < depth.height; ++y)
    for (int x = 0; x < depth.width; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * depth.width + x;
      if (!valid.empty() && !valid[idx]) continue;
      const auto bp = fisheye::back_project(cal, inv, x, y);
      if (!bp.ok) continue;
      double d = depth.at(x, y, 0);
      if (d < 0) {
        d = 0;
        ++out.clamped_negative;
      }
      const double st = std::sin(bp.ang.theta);
      out.cloud.points.push_back({d * st * std::cos(bp.ang.phi), d * st * std::sin(bp.ang.phi),
                                  d * std::cos(bp.ang.theta)});
    }
  return out;
}

namespace {

// Uniform spatial hash over the target cloud. Collisions only widen the
// candidate set; distances are always verified, so results stay exact.
class HashGrid {
 public:
  explicit HashGrid(const PointCloud& cloud) : pts_(cloud.points) {
    lo_ = {std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
           std::numeric_limits<double>::max()};
    std::array<double, 3> hi = {-lo_[0], -lo_[1], -lo_[2]};
    for (const auto& p : pts_)
      for (int a = 0; a < 3; ++a) {
        lo_[a] = std::min(lo_[a], p[a]);
        hi[a] = std::max(hi[a], p[a]);
      }
    double extent = 0.0;
    for (int a = 0; a < 3; ++a) extent = std::max(extent, hi[a] - lo_[a]);
    const double target_cells = std::cbrt(static_cast<double>(pts_.size()));
    cell_ = std::max(extent / std::max(target_cells, 1.0), 1e-12);
    for (int a = 0; a < 3; ++a)
      dims_[a] = static_cast<std::int64_t>((hi[a] - lo_[a]) / cell_) + 1;
    buckets_.max_load_factor(0.7f);
    for (std::size_t i = 0; i < pts_.size(); ++i)
      buckets_[key(coord(pts_[i]))].push_back(static_cast<std::int32_t>(i));
  }

  double nearest_sq(const std::array<double, 3>& q) const {
    const auto qc = coord(q);
    double best = std::numeric_limits<double>::max();
    // Expanding Chebyshev rings of cells; any point in ring r is at least
    // (r-1)*cell away, so stop once that bound exceeds the best distance.
    // Rings before the grid's bounding box are empty and skipped outright.
    const std::int64_t max_ring = max_ring_from(qc);
    for (std::int64_t r = first_ring_from(qc);; ++r) {
      if (r > 0 && best < std::numeric_limits<double>::max()) {
        const double bound = static_cast<double>(r - 1) * cell_;
        if (best < bound * bound) break;
      }
      if (r > max_ring) break;
      scan_ring(qc, r, q, best);
    }
    return best;
  }

 private:
  std::array<std::int64_t, 3> coord(const std::array<double, 3>& p) const {
    return {static_cast<std::int64_t>(std::floor((p[0] - lo_[0]) / cell_)),
            static_cast<std::int64_t>(std::floor((p[1] - lo_[1]) / cell_)),
            static_cast<std::int64_t>(std::floor((p[2] - lo_[2]) / cell_))};
  }
  static std::uint64_t key(const std::array<std::int64_t, 3>& c) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto v : c) {
      h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ULL;
      h *= 1099511628211ULL;
    }
    return h;
  }
  std::int64_t max_ring_from(const std::array<std::int64_t, 3>& qc) const {
    std::int64_t m = 0;
    for (int a = 0; a < 3; ++a) {
      m = std::max(m, std::max(qc[a], std::int64_t{0}));
      m = std::max(m, std::max(dims_[a] - 1 - qc[a], std::int64_t{0}));
    }
    return m + 1;
  }
  // first ring whose shell can intersect the grid's bounding box
  std::int64_t first_ring_from(const std::array<std::int64_t, 3>& qc) const {
    std::int64_t m = 0;
    for (int a = 0; a < 3; ++a) {
      if (qc[a] < 0) m = std::max(m, -qc[a]);
      if (qc[a] >= dims_[a]) m = std::max(m, qc[a] - dims_[a] + 1);
    }
    return m;
  }
  void visit_cell(const std::array<std::int64_t, 3>& c, const std::array<double, 3>& q,
                  double& best) const {
    if (c[0] < 0 || c[0] >= dims_[0] || c[1] < 0 || c[1] >= dims_[1] || c[2] < 0 ||
        c[2] >= dims_[2])
      return;
    const auto it = buckets_.find(key(c));
    if (it == buckets_.end()) return;
    for (const auto i : it->second) {
      const auto& p = pts_[i];
      const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
  }
  void scan_ring(const std::array<std::int64_t, 3>& qc, std::int64_t r,
                 const std::array<double, 3>& q, double& best) const {
    if (r == 0) {
      visit_cell(qc, q, best);
      return;
    }
    // shell of the cube: two full faces in x, the rest with |dy| or |dz| = r
    for (std::int64_t dy = -r; dy <= r; ++dy)
      for (std::int64_t dz = -r; dz <= r; ++dz) {
        visit_cell({qc[0] - r, qc[1] + dy, qc[2] + dz}, q, best);
        visit_cell({qc[0] + r, qc[1] + dy, qc[2] + dz}, q, best);
      }
    for (std::int64_t dx = -r + 1; dx <= r - 1; ++dx) {
      for (std::int64_t dz = -r; dz <= r; ++dz) {
        visit_cell({qc[0] + dx, qc[1] - r, qc[2] + dz}, q, best);
        visit_cell({qc[0] + dx, qc[1] + r, qc[2] + dz}, q, best);
      }
      for (std::int64_t dy = -r + 1; dy <= r - 1; ++dy) {
        visit_cell({qc[0] + dx, qc[1] + dy, qc[2] - r}, q, best);
        visit_cell({qc[0] + dx, qc[1] + dy, qc[2] + r}, q, best);
      }
    }
  }

  const std::vector<std::array<double, 3>>& pts_;
  std::array<double, 3> lo_;
  std::array<std::int64_t, 3> dims_;
  double cell_{1.0};
  std::unordered_map<std::uint64_t, std::vector<std::int32_t>> buckets_;
};

double directed_mean_sq(const PointCloud& from, const HashGrid& target) {
  const std::int64_t n = static_cast<std::int64_t>(from.points.size());
  std::vector<double> best(static_cast<std::size_t>(n));
  parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) best[i] = target.nearest_sq(from.points[i]);
  });
  double acc = 0.0;
  for (const double b : best) acc += b;  // fixed order, thread-count independent
  return acc / static_cast<double>(n);
}

}  // namespace

double chamfer(const PointCloud& a, const PointCloud& b) {
  if (a.points.empty() || b.points.empty())
    throw std::invalid_argument("chamfer: point clouds must be nonempty");
  const HashGrid ga(a);
  const HashGrid gb(b);
  return directed_mean_sq(a, gb) + directed_mean_sq(b, ga);
}

}  // namespace healswin::metrics
