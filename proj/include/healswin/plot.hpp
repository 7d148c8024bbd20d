#pragma once

#include "healswin/fisheye.hpp"

namespace healswin::io {

/// Renders a map as a per-face montage: face f occupies tile
/// (f mod 4, f div 4), each tile nside x nside in local (x, y) layout with
/// y up. 3-channel maps are clamped to [0, 1]; single-channel maps are
/// min/max-normalized to grayscale. Invalid pixels come out black.
ImageRaster montage_faces(const HealpixMap& map);

/// Fisheye back-projection view of a map through a calibration.
ImageRaster fisheye_view(const HealpixMap& map, const fisheye::CameraCalibration& cal, int width,
                         int height);

}  // namespace healswin::io
