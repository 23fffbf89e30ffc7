#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "dsmsr/data/raster.hpp"
#include "dsmsr/error.hpp"

namespace dsmsr {

// Affine map (v - lo) / (hi - lo) clipped to [0, 1]. Nodata cells keep their
// raw value and mask.
inline RasterGrid normalize_unit(const RasterGrid& grid, float lo, float hi) {
  if (!(hi > lo)) throw UsageError("normalize_unit requires hi > lo");
  RasterGrid out = grid;
  const float span = hi - lo;
  for (int c = 0; c < grid.channels; ++c)
    for (int r = 0; r < grid.height; ++r)
      for (int k = 0; k < grid.width; ++k) {
        if (grid.is_nodata(r, k)) continue;
        out.at(c, r, k) = std::clamp((grid.at(c, r, k) - lo) / span, 0.0f, 1.0f);
      }
  return out;
}

// Keys cubic convolution kernel.
inline double keys_kernel(double x, double a = -0.5) {
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

namespace detail {

struct Taps {
  std::array<int, 4> index;
  std::array<double, 4> weight;
};

// Center-aligned 4-tap sampling positions for resizing `in` samples to `out`,
// with replicated edges.
inline std::vector<Taps> cubic_taps(int in, int out) {
  std::vector<Taps> taps(out);
  const double ratio = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    const double src = (i + 0.5) * ratio - 0.5;
    const int base = static_cast<int>(std::floor(src));
    double sum = 0;
    for (int t = 0; t < 4; ++t) {
      const int j = base - 1 + t;
      taps[i].index[t] = std::clamp(j, 0, in - 1);
      taps[i].weight[t] = keys_kernel(src - j);
      sum += taps[i].weight[t];
    }
    for (auto& w : taps[i].weight) w /= sum;
  }
  return taps;
}

}  // namespace detail

// Separable bicubic resize to (out_h, out_w). The nodata mask, when present,
// marks an output cell if any contributing input cell is nodata.
inline RasterGrid bicubic_resize(const RasterGrid& img, int out_h, int out_w) {
  img.check_invariants();
  const auto rows = detail::cubic_taps(img.height, out_h);
  const auto cols = detail::cubic_taps(img.width, out_w);
  RasterGrid out(out_h, out_w, img.channels);
  std::vector<double> tmp(static_cast<std::size_t>(img.height) * out_w);
  for (int c = 0; c < img.channels; ++c) {
    for (int r = 0; r < img.height; ++r)
      for (int k = 0; k < out_w; ++k) {
        double acc = 0;
        for (int t = 0; t < 4; ++t) acc += cols[k].weight[t] * img.at(c, r, cols[k].index[t]);
        tmp[static_cast<std::size_t>(r) * out_w + k] = acc;
      }
    for (int r = 0; r < out_h; ++r)
      for (int k = 0; k < out_w; ++k) {
        double acc = 0;
        for (int t = 0; t < 4; ++t) acc += rows[r].weight[t] * tmp[static_cast<std::size_t>(rows[r].index[t]) * out_w + k];
        out.at(c, r, k) = static_cast<float>(acc);
      }
  }
  if (img.nodata_mask) {
    std::vector<std::uint8_t> m(out.pixels(), 0);
    for (int r = 0; r < out_h; ++r)
      for (int k = 0; k < out_w; ++k)
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b)
            if (img.is_nodata(rows[r].index[a], cols[k].index[b])) m[static_cast<std::size_t>(r) * out_w + k] = 1;
    out.nodata_mask = std::move(m);
  }
  if (img.geo) {
    GeoInfo g = *img.geo;
    g.pixel_w *= static_cast<double>(img.width) / out_w;
    g.pixel_h *= static_cast<double>(img.height) / out_h;
    out.geo = g;
  }
  return out;
}

inline RasterGrid bicubic_downsample(const RasterGrid& img, int factor) {
  if (factor != 2 && factor != 4 && factor != 8) {
    throw UsageError("bicubic_downsample factor must be 2, 4 or 8, got " + std::to_string(factor));
  }
  if (img.height % factor != 0 || img.width % factor != 0) {
    throw DataError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                    " is not divisible by factor " + std::to_string(factor) + "; crop it first");
  }
  return bicubic_resize(img, img.height / factor, img.width / factor);
}

inline RasterGrid bicubic_upsample(const RasterGrid& img, int factor) {
  if (factor < 1) throw UsageError("bicubic_upsample factor must be >= 1");
  return bicubic_resize(img, img.height * factor, img.width * factor);
}

}  // namespace dsmsr
