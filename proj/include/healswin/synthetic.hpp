#pragma once

#include <cstdint>
#include <vector>

#include "healswin/fisheye.hpp"

// Deterministic procedural street-scene stand-in: a ground plane seen
// through a fisheye half-sphere, spherical-cap obstacles at seeded
// positions, sky above the horizon and an ego disc behind the camera.
// The scene is a pure function of direction, so the HEALPix and raster
// rendering paths sample the same analytic signal.

namespace healswin::synthetic {

// class ids
inline constexpr int kVoid = 0;
inline constexpr int kRoad = 1;
inline constexpr int kSky = 2;
inline constexpr int kObjectA = 3;
inline constexpr int kObjectB = 4;
inline constexpr int kEgo = 5;
inline constexpr int kNumClasses = 6;

inline constexpr double kDepthMin = 0.5;   // meters
inline constexpr double kDepthMax = 100.0;

struct SceneSpec {
  std::uint64_t seed{0};
  std::int64_t nside{16};
  int num_objects{4};
  int num_classes{kNumClasses};
  fisheye::CameraCalibration camera;  // used by the raster path
};

struct Sample {
  HealpixMap image;   // 3 channels in [0, 1]
  HealpixMap labels;  // 1 channel, integer class ids
  HealpixMap depth;   // 1 channel, meters; invalid at sky
  std::vector<std::uint8_t> sky_mask;
};

struct RasterSample {
  ImageRaster image;
  ImageRaster labels;
  ImageRaster depth;
  std::vector<std::uint8_t> sky_mask;
  std::vector<std::uint8_t> covered;  // false outside the lens field of view
};

/// Point evaluation of the analytic scene.
struct ScenePoint {
  int cls{kVoid};
  double depth{0.0};  // meaningless when sky
  bool sky{false};
  float color[3]{0.f, 0.f, 0.f};
};

class Scene {
 public:
  explicit Scene(const SceneSpec& spec);
  ScenePoint eval(double theta, double phi) const;

 private:
  struct Cap {
    double cx, cy, cz;  // unit center direction
    double cos_radius;
    double depth;
    int cls;
  };
  std::uint64_t seed_;
  std::vector<Cap> caps_;
};

Sample generate(const SceneSpec& spec);
RasterSample render_fisheye(const SceneSpec& spec);

}  // namespace healswin::synthetic
