#include "healswin/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "healswin/threading.hpp"

namespace healswin::synthetic {

namespace {

constexpr double kCameraHeight = 1.4;  // meters above the ground plane
constexpr double kHorizonBand = 0.02;  // |u.d| below this is the void band
constexpr double kEgoRadius = 0.35;    // rad, cap around the south pole
constexpr double kEgoDepth = 0.8;
constexpr double kNoiseAmp = 0.12;
constexpr double kNoiseCell = 0.03;  // rad, quantization of the color noise

constexpr float kPalette[kNumClasses][3] = {
    {0.05f, 0.05f, 0.05f},  // void
    {0.45f, 0.30f, 0.45f},  // road
    {0.35f, 0.55f, 0.80f},  // sky
    {0.75f, 0.20f, 0.15f},  // object-a
    {0.15f, 0.60f, 0.25f},  // object-b
    {0.90f, 0.90f, 0.90f},  // ego disc
};

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double hash_u01(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  const std::uint64_t h = mix64(a ^ mix64(b ^ mix64(c)));
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

struct SeqRng {
  std::uint64_t state;
  double u01() {
    state = mix64(state);
    return static_cast<double>(state >> 11) * (1.0 / 9007199254740992.0);
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }
};

}  // namespace

Scene::Scene(const SceneSpec& spec) : seed_(spec.seed) {
  SeqRng rng{mix64(spec.seed ^ 0x5ee3a11ce5ULL)};
  caps_.reserve(static_cast<std::size_t>(std::max(spec.num_objects, 0)));
  for (int k = 0; k < spec.num_objects; ++k) {
    Cap cap;
    // centers in the well-covered part of the half sphere
    const double theta = std::acos(rng.uniform(std::cos(2.0), 1.0));
    const double phi = rng.uniform(0.0, 2 * hp::kPi);
    cap.cx = std::sin(theta) * std::cos(phi);
    cap.cy = std::sin(theta) * std::sin(phi);
    cap.cz = std::cos(theta);
    cap.cos_radius = std::cos(rng.uniform(0.08, 0.30));
    cap.depth = rng.uniform(1.0, 30.0);
    cap.cls = kObjectA + (k % 2);
    caps_.push_back(cap);
  }
}

ScenePoint Scene::eval(double theta, double phi) const {
  const double ux = std::sin(theta) * std::cos(phi);
  const double uy = std::sin(theta) * std::sin(phi);
  const double uz = std::cos(theta);

  // ground plane kCameraHeight below the camera, "down" = +y
  const double toward_ground = uy;

  ScenePoint out;
  if (toward_ground > kHorizonBand) {
    out.cls = kRoad;
    out.depth = std::clamp(kCameraHeight / toward_ground, kDepthMin, kDepthMax);
  } else if (toward_ground < -kHorizonBand) {
    out.cls = kSky;
    out.sky = true;
    out.depth = 0.0;
  } else {
    out.cls = kVoid;  // horizon clutter band
    out.depth = kDepthMax;
  }

  for (const auto& cap : caps_) {
    if (ux * cap.cx + uy * cap.cy + uz * cap.cz < cap.cos_radius) continue;
    if (!out.sky && cap.depth >= out.depth) continue;  // occluded by nearer content
    out.cls = cap.cls;
    out.depth = cap.depth;
    out.sky = false;
  }

  if (theta > hp::kPi - kEgoRadius) {
    out.cls = kEgo;
    out.depth = kEgoDepth;
    out.sky = false;
  }

  const auto ci = static_cast<std::uint64_t>(theta / kNoiseCell);
  const auto cj = static_cast<std::uint64_t>(phi / kNoiseCell);
  for (int ch = 0; ch < 3; ++ch) {
    const double noise =
        (hash_u01(seed_ ^ (static_cast<std::uint64_t>(out.cls) * 0x10001 + ch), ci, cj) - 0.5) *
        kNoiseAmp;
    out.color[ch] =
        std::clamp(kPalette[out.cls][ch] + static_cast<float>(noise), 0.0f, 1.0f);
  }
  return out;
}

Sample generate(const SceneSpec& spec) {
  const Scene scene(spec);
  const hp::NSide ns(spec.nside);

  Sample s;
  s.image = HealpixMap::zeros(spec.nside, 8, 3);
  s.labels = HealpixMap::zeros(spec.nside, 8, 1);
  s.depth = HealpixMap::zeros(spec.nside, 8, 1);
  const std::int64_t n = s.image.num_pixels();
  s.depth.validity.assign(static_cast<std::size_t>(n), 1);
  s.sky_mask.assign(static_cast<std::size_t>(n), 0);

  parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t p = lo; p < hi; ++p) {
      const auto ang = hp::pix_to_ang(ns, p, hp::Scheme::nested);
      const ScenePoint pt = scene.eval(ang.theta, ang.phi);
      for (int c = 0; c < 3; ++c) s.image.at(p, c) = pt.color[c];
      s.labels.at(p, 0) = static_cast<float>(pt.cls);
      s.depth.at(p, 0) = static_cast<float>(pt.sky ? 0.0 : pt.depth);
      if (pt.sky) {
        s.depth.validity[p] = 0;
        s.sky_mask[p] = 1;
      }
    }
  });
  return s;
}

RasterSample render_fisheye(const SceneSpec& spec) {
  const Scene scene(spec);
  const auto& cal = spec.camera;
  const fisheye::RadiusInverter inv(cal);
  const int w = cal.width, h = cal.height;

  RasterSample s;
  s.image = ImageRaster::zeros(w, h, 3);
  s.labels = ImageRaster::zeros(w, h, 1);
  s.depth = ImageRaster::zeros(w, h, 1);
  const std::int64_t n = static_cast<std::int64_t>(w) * h;
  s.sky_mask.assign(static_cast<std::size_t>(n), 0);
  s.covered.assign(static_cast<std::size_t>(n), 0);

  parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t idx = lo; idx < hi; ++idx) {
      const int x = static_cast<int>(idx % w);
      const int y = static_cast<int>(idx / w);
      const auto bp = fisheye::back_project(cal, inv, x, y);
      if (!bp.ok) continue;  // outside the lens field of view: stays void
      const ScenePoint pt = scene.eval(bp.ang.theta, bp.ang.phi);
      for (int c = 0; c < 3; ++c) s.image.at(x, y, c) = pt.color[c];
      s.labels.at(x, y, 0) = static_cast<float>(pt.cls);
      s.depth.at(x, y, 0) = static_cast<float>(pt.sky ? 0.0 : pt.depth);
      s.covered[idx] = 1;
      if (pt.sky) s.sky_mask[idx] = 1;
    }
  });
  return s;
}

}  // namespace healswin::synthetic
