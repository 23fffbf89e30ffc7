#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>

#include "dsmsr/data/raster.hpp"
#include "dsmsr/error.hpp"

namespace dsmsr {

enum class PerturbMode { identity, constant_shift, random_transform };
// `random` draws one of the four directions from rng_seed.
enum class ShiftDirection { up, down, left, right, random };

struct PerturbSpec {
  PerturbMode mode = PerturbMode::identity;
  int shift_px = 0;
  ShiftDirection direction = ShiftDirection::right;
  double max_rotation_deg = 0;
  double max_skew = 0;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (mode == PerturbMode::constant_shift && shift_px < 1) {
      throw UsageError("constant_shift requires shift_px >= 1");
    }
    if (mode == PerturbMode::random_transform && !(max_rotation_deg > 0 || max_skew > 0)) {
      throw UsageError("random_transform requires max_rotation_deg > 0 or max_skew > 0");
    }
    if (max_rotation_deg < 0 || max_skew < 0) throw UsageError("perturbation magnitudes must be non-negative");
  }
};

inline PerturbMode parse_perturb_mode(const std::string& s) {
  if (s == "identity") return PerturbMode::identity;
  if (s == "constant_shift") return PerturbMode::constant_shift;
  if (s == "random_transform") return PerturbMode::random_transform;
  throw UsageError("unknown perturbation mode '" + s + "'");
}

inline ShiftDirection parse_direction(const std::string& s) {
  if (s == "up") return ShiftDirection::up;
  if (s == "down") return ShiftDirection::down;
  if (s == "left") return ShiftDirection::left;
  if (s == "right") return ShiftDirection::right;
  if (s == "random") return ShiftDirection::random;
  throw UsageError("unknown shift direction '" + s + "'");
}

inline const char* to_string(PerturbMode m) {
  switch (m) {
    case PerturbMode::identity: return "identity";
    case PerturbMode::constant_shift: return "constant_shift";
    case PerturbMode::random_transform: return "random_transform";
  }
  return "?";
}

inline const char* to_string(ShiftDirection d) {
  switch (d) {
    case ShiftDirection::up: return "up";
    case ShiftDirection::down: return "down";
    case ShiftDirection::left: return "left";
    case ShiftDirection::right: return "right";
    case ShiftDirection::random: return "random";
  }
  return "?";
}

// Integer translation; vacated cells replicate the nearest edge row/column.
// Shifting right by s moves the value at (r, c) to (r, c + s).
inline RasterGrid shift_grid(const RasterGrid& grid, int shift_px, ShiftDirection dir) {
  if (dir == ShiftDirection::random) throw UsageError("shift_grid needs a concrete direction");
  const bool horizontal = dir == ShiftDirection::left || dir == ShiftDirection::right;
  const int extent = horizontal ? grid.width : grid.height;
  if (shift_px >= extent) {
    throw DataError("shift of " + std::to_string(shift_px) + " px is not smaller than grid dimension " +
                    std::to_string(extent));
  }
  const int dr = dir == ShiftDirection::down ? -shift_px : dir == ShiftDirection::up ? shift_px : 0;
  const int dc = dir == ShiftDirection::right ? -shift_px : dir == ShiftDirection::left ? shift_px : 0;
  RasterGrid out = grid;
  for (int c = 0; c < grid.channels; ++c)
    for (int r = 0; r < grid.height; ++r)
      for (int k = 0; k < grid.width; ++k) {
        out.at(c, r, k) = grid.at(c, std::clamp(r + dr, 0, grid.height - 1), std::clamp(k + dc, 0, grid.width - 1));
      }
  if (grid.nodata_mask) {
    auto& m = *out.nodata_mask;
    for (int r = 0; r < grid.height; ++r)
      for (int k = 0; k < grid.width; ++k)
        m[static_cast<std::size_t>(r) * grid.width + k] =
            grid.is_nodata(std::clamp(r + dr, 0, grid.height - 1), std::clamp(k + dc, 0, grid.width - 1));
  }
  return out;
}

struct AffineParams {
  double rotation_deg = 0;
  double skew = 0;  // horizontal shear factor applied before the rotation
};

// Forward matrix [[a, b], [c, d]] acting on (x, y) offsets from the grid centre.
inline std::array<double, 4> affine_matrix(const AffineParams& p) {
  const double t = p.rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(t), sn = std::sin(t);
  // R * [[1, k], [0, 1]]
  return {cs, cs * p.skew - sn, sn, sn * p.skew + cs};
}

// Warps the grid so that the cell at p lands at A (p - centre) + centre, using
// nearest-neighbour inverse mapping with edge replication.
inline RasterGrid affine_warp_nearest(const RasterGrid& grid, const AffineParams& p) {
  const auto m = affine_matrix(p);
  const double det = m[0] * m[3] - m[1] * m[2];
  const std::array<double, 4> inv{m[3] / det, -m[1] / det, -m[2] / det, m[0] / det};
  const double cx = (grid.width - 1) / 2.0;
  const double cy = (grid.height - 1) / 2.0;
  RasterGrid out = grid;
  for (int r = 0; r < grid.height; ++r)
    for (int k = 0; k < grid.width; ++k) {
      const double dx = k - cx, dy = r - cy;
      const double sx = inv[0] * dx + inv[1] * dy + cx;
      const double sy = inv[2] * dx + inv[3] * dy + cy;
      const int col = std::clamp(static_cast<int>(std::floor(sx + 0.5)), 0, grid.width - 1);
      const int row = std::clamp(static_cast<int>(std::floor(sy + 0.5)), 0, grid.height - 1);
      for (int c = 0; c < grid.channels; ++c) out.at(c, r, k) = grid.at(c, row, col);
      if (grid.nodata_mask) (*out.nodata_mask)[static_cast<std::size_t>(r) * grid.width + k] = grid.is_nodata(row, col);
    }
  return out;
}

inline AffineParams draw_transform(const PerturbSpec& spec) {
  std::mt19937_64 rng(spec.rng_seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  AffineParams p;
  p.rotation_deg = spec.max_rotation_deg * u(rng);
  p.skew = spec.max_skew * u(rng);
  return p;
}

inline ShiftDirection draw_direction(const PerturbSpec& spec) {
  if (spec.direction != ShiftDirection::random) return spec.direction;
  std::mt19937_64 rng(spec.rng_seed);
  constexpr ShiftDirection dirs[] = {ShiftDirection::up, ShiftDirection::down, ShiftDirection::left,
                                     ShiftDirection::right};
  return dirs[std::uniform_int_distribution<int>(0, 3)(rng)];
}

inline RasterGrid perturb_ndsm(const RasterGrid& ndsm, const PerturbSpec& spec) {
  spec.validate();
  switch (spec.mode) {
    case PerturbMode::identity: return ndsm;
    case PerturbMode::constant_shift: return shift_grid(ndsm, spec.shift_px, draw_direction(spec));
    case PerturbMode::random_transform: return affine_warp_nearest(ndsm, draw_transform(spec));
  }
  return ndsm;
}

}  // namespace dsmsr
