#include "healswin/plot.hpp"

#include <algorithm>
#include <stdexcept>

#include "healswin/healpix.hpp"

namespace healswin::io {

namespace {

struct GrayScale {
  float lo{0.f};
  float span{1.f};
};

GrayScale gray_range(const HealpixMap& map) {
  float lo = 0.f, hi = 1.f;
  bool first = true;
  for (std::int64_t i = 0; i < map.num_pixels(); ++i) {
    if (!map.valid(i)) continue;
    const float v = map.at(i, 0);
    if (first) {
      lo = hi = v;
      first = false;
    } else {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  return GrayScale{lo, hi - lo > 1e-12f ? hi - lo : 1.f};
}

void write_rgb(ImageRaster& img, int x, int y, const HealpixMap& map, std::int64_t p,
               const GrayScale& gs) {
  if (!map.valid(p)) return;
  if (map.channels >= 3) {
    for (int c = 0; c < 3; ++c) img.at(x, y, c) = std::clamp(map.at(p, c), 0.f, 1.f);
  } else {
    const float g = std::clamp((map.at(p, 0) - gs.lo) / gs.span, 0.f, 1.f);
    for (int c = 0; c < 3; ++c) img.at(x, y, c) = g;
  }
}

}  // namespace

ImageRaster montage_faces(const HealpixMap& map) {
  if (map.channels != 1 && map.channels != 3)
    throw std::invalid_argument("montage_faces: expected 1 or 3 channels");
  const auto n = static_cast<int>(map.nside);
  const int cols = 4;
  const int rows = (map.num_faces + cols - 1) / cols;
  ImageRaster img = ImageRaster::zeros(cols * n, rows * n, 3);
  const GrayScale gs = map.channels == 1 ? gray_range(map) : GrayScale{};

  const hp::NSide ns(map.nside);
  for (std::int64_t p = 0; p < map.num_pixels(); ++p) {
    const auto fc = hp::local_xy(ns, p);
    const int tx = (fc.face % cols) * n + static_cast<int>(fc.x);
    const int ty = (fc.face / cols) * n + static_cast<int>(map.nside - 1 - fc.y);
    write_rgb(img, tx, ty, map, p, gs);
  }
  return img;
}

ImageRaster fisheye_view(const HealpixMap& map, const fisheye::CameraCalibration& cal, int width,
                         int height) {
  if (map.channels != 1 && map.channels != 3)
    throw std::invalid_argument("fisheye_view: expected 1 or 3 channels");
  const auto rr = fisheye::resample_to_raster(map, cal, width, height);
  ImageRaster img = ImageRaster::zeros(width, height, 3);
  GrayScale gs = map.channels == 1 ? gray_range(map) : GrayScale{};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      if (!rr.covered[static_cast<std::size_t>(y) * width + x]) continue;
      if (map.channels >= 3) {
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = std::clamp(rr.raster.at(x, y, c), 0.f, 1.f);
      } else {
        const float g = std::clamp((rr.raster.at(x, y, 0) - gs.lo) / gs.span, 0.f, 1.f);
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = g;
      }
    }
  return img;
}

}  // namespace healswin::io
