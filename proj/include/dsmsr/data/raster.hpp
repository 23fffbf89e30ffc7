#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dsmsr/error.hpp"
#include "dsmsr/tensor.hpp"

namespace dsmsr {

// Affine georeferencing in the GDAL geotransform convention: pixel (row, col)
// has its top-left corner at (origin_x + col * pixel_w, origin_y + row * pixel_h).
// North-up rasters have pixel_h < 0.
struct GeoInfo {
  double origin_x = 0;
  double origin_y = 0;
  double pixel_w = 1;
  double pixel_h = -1;
  std::string crs;  // e.g. "EPSG:2169"

  bool operator==(const GeoInfo&) const = default;
};

// Channel-planar float raster: values[(c * height + r) * width + col].
struct RasterGrid {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> values;
  std::optional<GeoInfo> geo;
  std::optional<std::vector<std::uint8_t>> nodata_mask;  // 1 = nodata, per pixel

  RasterGrid() = default;
  RasterGrid(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), values(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  std::size_t index(int c, int r, int col) const { return (static_cast<std::size_t>(c) * height + r) * width + col; }
  float& at(int c, int r, int col) { return values[index(c, r, col)]; }
  float at(int c, int r, int col) const { return values[index(c, r, col)]; }

  bool is_nodata(int r, int col) const {
    return nodata_mask && (*nodata_mask)[static_cast<std::size_t>(r) * width + col] != 0;
  }
  bool has_nodata() const {
    if (!nodata_mask) return false;
    for (auto m : *nodata_mask)
      if (m) return true;
    return false;
  }

  void check_invariants() const {
    if (height <= 0 || width <= 0 || channels <= 0) throw DataError("raster has empty extent");
    if (values.size() != pixels() * channels) throw DataError("raster value count does not match extent");
    if (nodata_mask && nodata_mask->size() != pixels()) throw DataError("nodata mask size does not match extent");
  }

  // Copy of a window; georeferencing is shifted to the window origin.
  RasterGrid window(int row, int col, int h, int w) const {
    if (row < 0 || col < 0 || row + h > height || col + w > width) throw DataError("window outside raster");
    RasterGrid out(h, w, channels);
    for (int c = 0; c < channels; ++c)
      for (int r = 0; r < h; ++r)
        for (int k = 0; k < w; ++k) out.at(c, r, k) = at(c, row + r, col + k);
    if (nodata_mask) {
      std::vector<std::uint8_t> m(static_cast<std::size_t>(h) * w);
      for (int r = 0; r < h; ++r)
        for (int k = 0; k < w; ++k) m[static_cast<std::size_t>(r) * w + k] = is_nodata(row + r, col + k) ? 1 : 0;
      out.nodata_mask = std::move(m);
    }
    if (geo) {
      GeoInfo g = *geo;
      g.origin_x += col * g.pixel_w;
      g.origin_y += row * g.pixel_h;
      out.geo = g;
    }
    return out;
  }

  bool operator==(const RasterGrid&) const = default;
};

struct ScenePair {
  RasterGrid rgb;   // 3 channels in [0, 1]
  RasterGrid ndsm;  // 1 channel, meters above ground
  std::string id;

  void check_invariants() const {
    rgb.check_invariants();
    ndsm.check_invariants();
    if (rgb.channels != 3) throw DataError("scene " + id + ": rgb must have 3 channels");
    if (ndsm.channels != 1) throw DataError("scene " + id + ": ndsm must have 1 channel");
    if (rgb.height != ndsm.height || rgb.width != ndsm.width) {
      throw DataError("scene " + id + ": rgb and ndsm extents differ");
    }
    if (rgb.geo.has_value() != ndsm.geo.has_value() || (rgb.geo && !(*rgb.geo == *ndsm.geo))) {
      throw DataError("scene " + id + ": rgb and ndsm georeferencing differ");
    }
  }

  bool operator==(const ScenePair&) const = default;
};

struct PatchPair {
  RasterGrid lr;
  RasterGrid hr;
  RasterGrid hr_ndsm;
  int scale = 4;
};

// Stacks same-sized grids into an [N, C, H, W] tensor.
template <typename T>
Tensor<T> to_batch(const std::vector<const RasterGrid*>& grids) {
  if (grids.empty()) throw DataError("cannot batch zero rasters");
  const RasterGrid& f = *grids.front();
  Tensor<T> t(Shape{static_cast<int>(grids.size()), f.channels, f.height, f.width});
  for (std::size_t n = 0; n < grids.size(); ++n) {
    const RasterGrid& g = *grids[n];
    if (g.channels != f.channels || g.height != f.height || g.width != f.width) {
      throw DataError("cannot batch rasters of different extents");
    }
    T* dst = t.sample(static_cast<int>(n));
    for (std::size_t i = 0; i < g.values.size(); ++i) dst[i] = static_cast<T>(g.values[i]);
  }
  return t;
}

template <typename T>
Tensor<T> to_batch(const RasterGrid& grid) {
  return to_batch<T>(std::vector<const RasterGrid*>{&grid});
}

template <typename T>
RasterGrid from_batch(const Tensor<T>& t, int n) {
  RasterGrid g(t.h(), t.w(), t.c());
  const T* src = t.sample(n);
  for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = static_cast<float>(src[i]);
  return g;
}

}  // namespace dsmsr
