#pragma once

// Tiled super-resolution of rasters too large for one forward pass.
//
// Tile and overlap sizes are given in output pixels. Tiles are placed on a
// regular stride and the last one along each axis is pulled back to end at
// the raster edge, so no tile needs padding.

#include <algorithm>
#include <string>
#include <vector>

#include "dsmsr/data/raster.hpp"
#include "dsmsr/error.hpp"
#include "dsmsr/models/generator.hpp"
#include "dsmsr/training/evaluation.hpp"

namespace dsmsr {

enum class Blend { feather, crop_center };

inline Blend parse_blend(const std::string& s) {
  if (s == "feather") return Blend::feather;
  if (s == "crop-center") return Blend::crop_center;
  throw UsageError("unknown blend mode '" + s + "' (feather or crop-center)");
}

struct TileSpec {
  int tile_px = 512;
  int overlap_px = 64;
  Blend blend = Blend::feather;

  void validate(int scale) const {
    if (tile_px < 1 || overlap_px < 0) throw UsageError("tile sizes must be positive");
    if (tile_px % scale != 0) {
      throw UsageError("tile_px " + std::to_string(tile_px) + " is not divisible by scale " + std::to_string(scale));
    }
    if (overlap_px % scale != 0) {
      throw UsageError("overlap_px " + std::to_string(overlap_px) + " is not divisible by scale " +
                       std::to_string(scale));
    }
    if (2 * overlap_px >= tile_px) throw UsageError("overlap_px must be less than tile_px / 2");
  }
};

// Tile origins along one axis of length `extent` (input pixels).
inline std::vector<int> tile_starts(int extent, int tile, int overlap) {
  if (extent <= tile) return {0};
  std::vector<int> starts;
  const int stride = tile - overlap;
  for (int s = 0;; s += stride) {
    if (s + tile >= extent) {
      starts.push_back(extent - tile);
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

namespace detail {

// Per-position weights of one tile along one axis, in output pixels. A side
// that touches the raster edge keeps full weight. An interior side gets zero
// weight over the outer quarter of the overlap, where zero padding distorts
// the tile, then ramps linearly to full weight across the middle half.
inline std::vector<double> axis_weights(int len, int overlap, bool ramp_lo, bool ramp_hi) {
  std::vector<double> w(len, 1.0);
  if (overlap <= 0) return w;
  const double margin = overlap / 4.0, ramp = overlap / 2.0;
  auto rise = [&](double d) { return std::clamp((d - margin) / ramp, 0.0, 1.0); };
  for (int i = 0; i < len; ++i) {
    if (ramp_lo) w[i] = std::min(w[i], rise(i + 0.5));
    if (ramp_hi) w[i] = std::min(w[i], rise(len - i - 0.5));
  }
  return w;
}

// Interval [lo, hi) of a tile kept by crop-center: each neighbouring pair
// splits its shared span at the midpoint.
inline std::pair<int, int> kept_span(const std::vector<int>& starts, std::size_t i, int tile, int extent) {
  const int lo = i == 0 ? 0 : (starts[i] + std::min(extent, starts[i - 1] + tile)) / 2;
  const int hi = i + 1 == starts.size() ? std::min(extent, starts[i] + tile)
                                        : (starts[i + 1] + std::min(extent, starts[i] + tile)) / 2;
  return {lo, hi};
}

}  // namespace detail

template <typename T>
RasterGrid tiled_super_resolve(const Generator<T>& gen, const RasterGrid& lr, const TileSpec& spec) {
  const int s = gen.config().scale;
  spec.validate(s);
  if (lr.channels != 3) throw DataError("input raster must have 3 channels, got " + std::to_string(lr.channels));
  const int tile = spec.tile_px / s, overlap = spec.overlap_px / s;
  if (lr.height <= tile && lr.width <= tile) return super_resolve(gen, lr);

  const auto rows = tile_starts(lr.height, tile, overlap);
  const auto cols = tile_starts(lr.width, tile, overlap);
  const int oh = lr.height * s, ow = lr.width * s;
  RasterGrid out(oh, ow, 3);
  std::vector<double> acc(out.values.size(), 0.0), wsum(static_cast<std::size_t>(oh) * ow, 0.0);

  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    for (std::size_t ci = 0; ci < cols.size(); ++ci) {
      const int th = std::min(tile, lr.height), tw = std::min(tile, lr.width);
      RasterGrid piece = lr.window(rows[ri], cols[ci], th, tw);
      piece.geo.reset();
      const RasterGrid sr = super_resolve(gen, piece);
      const int r0 = rows[ri] * s, c0 = cols[ci] * s;
      if (spec.blend == Blend::feather) {
        const auto wr = detail::axis_weights(sr.height, spec.overlap_px, ri > 0, ri + 1 < rows.size());
        const auto wc = detail::axis_weights(sr.width, spec.overlap_px, ci > 0, ci + 1 < cols.size());
        for (int r = 0; r < sr.height; ++r)
          for (int k = 0; k < sr.width; ++k) {
            const double w = wr[r] * wc[k];
            const std::size_t px = static_cast<std::size_t>(r0 + r) * ow + c0 + k;
            wsum[px] += w;
            for (int c = 0; c < 3; ++c) acc[static_cast<std::size_t>(c) * oh * ow + px] += w * sr.at(c, r, k);
          }
      } else {
        const auto [rlo, rhi] = detail::kept_span(rows, ri, tile, lr.height);
        const auto [clo, chi] = detail::kept_span(cols, ci, tile, lr.width);
        for (int r = rlo * s; r < rhi * s; ++r)
          for (int k = clo * s; k < chi * s; ++k) {
            const std::size_t px = static_cast<std::size_t>(r) * ow + k;
            wsum[px] = 1.0;
            for (int c = 0; c < 3; ++c) {
              acc[static_cast<std::size_t>(c) * oh * ow + px] = sr.at(c, r - r0, k - c0);
            }
          }
      }
    }
  }
  for (int c = 0; c < 3; ++c)
    for (std::size_t px = 0; px < wsum.size(); ++px) {
      out.values[static_cast<std::size_t>(c) * oh * ow + px] =
          static_cast<float>(acc[static_cast<std::size_t>(c) * oh * ow + px] / wsum[px]);
    }
  if (lr.geo) {
    GeoInfo g = *lr.geo;
    g.pixel_w /= s;
    g.pixel_h /= s;
    out.geo = g;
  }
  return out;
}

}  // namespace dsmsr
