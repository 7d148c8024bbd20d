#include "healswin/fisheye.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "healswin/threading.hpp"

namespace healswin::fisheye {

namespace {

constexpr int kLutSize = 4096;

double bilinear_sample(const ImageRaster& img, double u, double v, int c) {
  // Taps clamp to the raster edge; the caller guarantees at least one tap
  // is in bounds.
  const auto x0 = static_cast<std::int64_t>(std::floor(u));
  const auto y0 = static_cast<std::int64_t>(std::floor(v));
  const double fx = u - static_cast<double>(x0);
  const double fy = v - static_cast<double>(y0);
  auto tap = [&](std::int64_t x, std::int64_t y) {
    x = std::clamp<std::int64_t>(x, 0, img.width - 1);
    y = std::clamp<std::int64_t>(y, 0, img.height - 1);
    return static_cast<double>(img.at(static_cast<int>(x), static_cast<int>(y), c));
  };
  const double top = tap(x0, y0) * (1.0 - fx) + tap(x0 + 1, y0) * fx;
  const double bot = tap(x0, y0 + 1) * (1.0 - fx) + tap(x0 + 1, y0 + 1) * fx;
  return top * (1.0 - fy) + bot * fy;
}

bool in_raster(const CameraCalibration& cal, double u, double v) {
  return u >= 0.0 && u <= cal.width - 1.0 && v >= 0.0 && v <= cal.height - 1.0;
}

}  // namespace

double fov_limit(const CameraCalibration& cal) {
  // r'(theta) = a1 + 2 a2 t + 3 a3 t^2 + 4 a4 t^3; scan for the first
  // non-increasing step on a fine lattice.
  const int steps = 4096;
  double prev = 0.0;
  for (int i = 1; i <= steps; ++i) {
    const double t = hp::kPi * i / steps;
    const double r = cal.radius(t);
    if (r <= prev) return hp::kPi * (i - 1) / steps;
    prev = r;
  }
  return hp::kPi;
}

CameraCalibration default_camera(int width, int height) {
  if (width < 2 || height < 2) throw std::invalid_argument("default_camera: raster too small");
  CameraCalibration cal;
  cal.width = width;
  cal.height = height;
  cal.cx = (width - 1) / 2.0;
  cal.cy = (height - 1) / 2.0;
  cal.aspect = 1.0;
  const double inscribed = std::min(std::min(cal.cx, width - 1 - cal.cx),
                                    std::min(cal.cy, height - 1 - cal.cy));
  cal.poly[0] = inscribed / (hp::kPi / 2);
  return cal;
}

ProjectedPoint project_sphere_to_image(const CameraCalibration& cal, hp::SphericalAngle ang) {
  ProjectedPoint out;
  if (ang.theta > fov_limit(cal)) {
    out.u = cal.cx;
    out.v = cal.cy;
    out.in_bounds = false;
    return out;
  }
  const double r = cal.radius(ang.theta);
  out.u = cal.cx + r * std::cos(ang.phi);
  out.v = cal.cy + cal.aspect * r * std::sin(ang.phi);
  out.in_bounds = in_raster(cal, out.u, out.v);
  return out;
}

RadiusInverter::RadiusInverter(const CameraCalibration& cal) : cal_(cal) {
  theta_max_ = fov_limit(cal);
  if (theta_max_ <= 0.0 || cal.radius(theta_max_) <= 0.0)
    throw std::invalid_argument("calibration is not invertible: r(theta) never increases");
  r_max_ = cal.radius(theta_max_);
  lut_.resize(kLutSize + 1);
  for (int i = 0; i <= kLutSize; ++i) lut_[i] = cal.radius(theta_max_ * i / kLutSize);
}

double RadiusInverter::theta(double radius) const {
  if (radius < 0.0 || radius > r_max_) return -1.0;
  if (radius == 0.0) return 0.0;
  auto it = std::lower_bound(lut_.begin(), lut_.end(), radius);
  std::int64_t hi_idx = it - lut_.begin();
  if (hi_idx == 0) hi_idx = 1;
  double lo = theta_max_ * (hi_idx - 1) / kLutSize;
  double hi = theta_max_ * hi_idx / kLutSize;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (cal_.radius(mid) < radius)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

BackProjected back_project(const CameraCalibration& cal, const RadiusInverter& inv, double u,
                           double v) {
  BackProjected out;
  const double dx = u - cal.cx;
  const double dy = (v - cal.cy) / cal.aspect;
  const double radius = std::hypot(dx, dy);
  const double theta = inv.theta(radius);
  if (theta < 0.0) return out;
  double phi = std::atan2(dy, dx);
  if (phi < 0.0) phi += 2 * hp::kPi;
  out.ang = hp::SphericalAngle{theta, phi};
  out.ok = true;
  return out;
}

HealpixMap resample_to_healpix(const ImageRaster& img, const CameraCalibration& cal,
                               hp::NSide nside, Interp interp, int num_faces) {
  if (img.width < 1 || img.height < 1 || img.channels < 1 || img.data.empty())
    throw std::invalid_argument("resample_to_healpix: empty raster");

  HealpixMap map = HealpixMap::zeros(nside.value, num_faces, img.channels);
  map.validity.assign(static_cast<std::size_t>(map.num_pixels()), 0);
  const double fov = fov_limit(cal);

  parallel_for(map.num_pixels(), [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t p = lo; p < hi; ++p) {
      const hp::SphericalAngle ang = hp::pix_to_ang(nside, p, hp::Scheme::nested);
      if (ang.theta > fov) continue;
      const double r = cal.radius(ang.theta);
      const double u = cal.cx + r * std::cos(ang.phi);
      const double v = cal.cy + cal.aspect * r * std::sin(ang.phi);
      if (interp == Interp::nearest) {
        if (!in_raster(cal, u, v)) continue;
        const int x = static_cast<int>(std::lround(u));
        const int y = static_cast<int>(std::lround(v));
        for (int c = 0; c < img.channels; ++c) map.at(p, c) = img.at(x, y, c);
      } else {
        const double x0 = std::floor(u);
        const double y0 = std::floor(v);
        // all four taps out of bounds -> pixel stays invalid; otherwise the
        // out-of-range taps clamp to the raster edge
        if (x0 + 1 < 0 || x0 > img.width - 1 || y0 + 1 < 0 || y0 > img.height - 1) continue;
        for (int c = 0; c < img.channels; ++c)
          map.at(p, c) = static_cast<float>(bilinear_sample(img, u, v, c));
      }
      map.validity[p] = 1;
    }
  });
  return map;
}

RasterResample resample_to_raster(const HealpixMap& map, const CameraCalibration& cal, int width,
                                  int height) {
  if (width < 1 || height < 1) throw std::invalid_argument("resample_to_raster: empty raster");
  const hp::NSide nside(map.nside);
  const RadiusInverter inv(cal);

  RasterResample out;
  out.raster = ImageRaster::zeros(width, height, map.channels);
  out.covered.assign(static_cast<std::size_t>(width) * height, 0);

  parallel_for(static_cast<std::int64_t>(width) * height, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t idx = lo; idx < hi; ++idx) {
      const int x = static_cast<int>(idx % width);
      const int y = static_cast<int>(idx / width);
      const BackProjected bp = back_project(cal, inv, x, y);
      if (!bp.ok) continue;
      const std::int64_t p = hp::ang_to_pix(nside, bp.ang, hp::Scheme::nested);
      if (p >= map.num_pixels()) continue;  // outside the base-pixel subset
      for (int c = 0; c < map.channels; ++c) out.raster.at(x, y, c) = map.at(p, c);
      out.covered[idx] = 1;
    }
  });
  return out;
}

std::vector<std::uint8_t> coverage_mask(const CameraCalibration& cal, int width, int height,
                                        hp::NSide nside, int num_faces) {
  HealpixMap stub = HealpixMap::zeros(nside.value, num_faces, 1);
  return resample_to_raster(stub, cal, width, height).covered;
}

}  // namespace healswin::fisheye
