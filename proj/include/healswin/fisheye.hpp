#pragma once

#include <cstdint>
#include <vector>

#include "healswin/healpix.hpp"

namespace healswin {

/// Row-major float raster, channel-minor: data[(y*width + x)*channels + c].
struct ImageRaster {
  int width{0};
  int height{0};
  int channels{0};
  std::vector<float> data;

  float at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  static ImageRaster zeros(int w, int h, int c) {
    return ImageRaster{w, h, c, std::vector<float>(static_cast<std::size_t>(w) * h * c, 0.f)};
  }
};

/// Per-pixel channel data over a (possibly 8-face subset) HEALPix grid,
/// nested order, channel-minor. validity marks pixels carrying real samples.
struct HealpixMap {
  std::int64_t nside{1};
  int num_faces{8};
  int channels{1};
  std::vector<float> data;
  std::vector<std::uint8_t> validity;  // empty means all valid

  std::int64_t num_pixels() const { return num_faces * nside * nside; }
  float at(std::int64_t p, int c) const { return data[p * channels + c]; }
  float& at(std::int64_t p, int c) { return data[p * channels + c]; }
  bool valid(std::int64_t p) const { return validity.empty() || validity[p] != 0; }
  static HealpixMap zeros(std::int64_t nside, int num_faces, int channels) {
    HealpixMap m{nside, num_faces, channels, {}, {}};
    m.data.assign(static_cast<std::size_t>(m.num_pixels()) * channels, 0.f);
    return m;
  }
};

namespace fisheye {

enum class Interp { bilinear, nearest };

/// Radial fisheye model: image radius r(theta) = a1*t + a2*t^2 + a3*t^3 +
/// a4*t^4 pixels, optical axis at theta = 0.
struct CameraCalibration {
  double poly[4]{0, 0, 0, 0};  // a1..a4
  double cx{0};
  double cy{0};
  double aspect{1.0};
  int width{0};
  int height{0};

  double radius(double theta) const {
    return theta * (poly[0] + theta * (poly[1] + theta * (poly[2] + theta * poly[3])));
  }
};

/// Largest theta up to pi on which r is strictly increasing; projection
/// beyond it is treated as outside the lens field of view.
double fov_limit(const CameraCalibration& cal);

/// Equidistant lens filling the raster: theta = pi/2 lands on the inscribed
/// circle around the principal point (image centre), so the field of view
/// slightly exceeds a half sphere at the corners.
CameraCalibration default_camera(int width, int height);

struct ProjectedPoint {
  double u{0};
  double v{0};
  bool in_bounds{false};
};

ProjectedPoint project_sphere_to_image(const CameraCalibration& cal, hp::SphericalAngle ang);

/// Inverts r(theta) by table-bracketed bisection. Monotone on [0, fov].
class RadiusInverter {
 public:
  explicit RadiusInverter(const CameraCalibration& cal);
  /// theta for a given radius, or a negative value if the radius exceeds
  /// the field of view.
  double theta(double radius) const;

 private:
  const CameraCalibration cal_;
  double theta_max_;
  double r_max_;
  std::vector<double> lut_;  // r at uniformly spaced theta
};

/// Back-projects raster pixel (x, y) centres to sphere angles.
/// ok=false when the radius is outside the lens field of view.
struct BackProjected {
  hp::SphericalAngle ang;
  bool ok{false};
};
BackProjected back_project(const CameraCalibration& cal, const RadiusInverter& inv, double u,
                           double v);

HealpixMap resample_to_healpix(const ImageRaster& img, const CameraCalibration& cal,
                               hp::NSide nside, Interp interp, int num_faces = 8);

struct RasterResample {
  ImageRaster raster;
  std::vector<std::uint8_t> covered;  // per raster pixel
};
RasterResample resample_to_raster(const HealpixMap& map, const CameraCalibration& cal, int width,
                                  int height);

/// True where the raster pixel's back-projection lands inside the subset.
std::vector<std::uint8_t> coverage_mask(const CameraCalibration& cal, int width, int height,
                                        hp::NSide nside, int num_faces = 8);

}  // namespace fisheye
}  // namespace healswin
