#pragma once

#include <cmath>
#include <string>

#include "dsmsr/data/raster.hpp"
#include "dsmsr/error.hpp"

namespace dsmsr {

struct AlignmentReport {
  bool ok = false;
  // Origin offset of the ndsm relative to the rgb raster, in rgb pixels
  // (x = columns, y = rows).
  double offset_x = 0;
  double offset_y = 0;
  std::string reason;
};

// Checks that an ndsm raster covers the same ground as an rgb raster whose
// pixels are `resample_ratio` times finer.
inline AlignmentReport validate_alignment(const RasterGrid& rgb, const RasterGrid& ndsm, int resample_ratio) {
  if (resample_ratio < 1) throw UsageError("resample_ratio must be >= 1");
  if (rgb.geo.has_value() != ndsm.geo.has_value()) {
    throw DataError("alignment check needs georeferencing on both rasters or on neither");
  }
  AlignmentReport rep;
  if (rgb.height != ndsm.height * resample_ratio || rgb.width != ndsm.width * resample_ratio) {
    rep.reason = "extent " + std::to_string(rgb.height) + "x" + std::to_string(rgb.width) + " vs " +
                 std::to_string(ndsm.height) + "x" + std::to_string(ndsm.width) + " inconsistent with ratio " +
                 std::to_string(resample_ratio);
    return rep;
  }
  if (!rgb.geo) {
    rep.ok = true;
    return rep;
  }
  const GeoInfo& a = *rgb.geo;
  const GeoInfo& b = *ndsm.geo;
  if (a.crs != b.crs) throw DataError("CRS mismatch: '" + a.crs + "' vs '" + b.crs + "'");
  const auto close = [](double x, double y) { return std::abs(x - y) <= 1e-6 * std::max(std::abs(x), std::abs(y)); };
  if (!close(b.pixel_w, a.pixel_w * resample_ratio) || !close(b.pixel_h, a.pixel_h * resample_ratio)) {
    rep.reason = "pixel size inconsistent with ratio " + std::to_string(resample_ratio);
    return rep;
  }
  rep.offset_x = (b.origin_x - a.origin_x) / a.pixel_w;
  rep.offset_y = (b.origin_y - a.origin_y) / a.pixel_h;
  if (std::abs(rep.offset_x) > 0.5 || std::abs(rep.offset_y) > 0.5) {
    rep.reason = "origins differ by (" + std::to_string(rep.offset_x) + ", " + std::to_string(rep.offset_y) +
                 ") pixels";
    return rep;
  }
  rep.ok = true;
  return rep;
}

}  // namespace dsmsr
