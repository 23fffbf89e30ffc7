#pragma once

// Procedural aerial scenes with exact above-ground heights.
//
// Ground is height 0 everywhere. Trees are domes, buildings are flat-roofed
// boxes that never overlap each other and overwrite trees. RGB is shaded so
// that height leaves visible cues: roofs brighten with height, tree crowns
// brighten towards their peak, and everything casts a shadow whose length is
// proportional to height.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dsmsr/data/raster.hpp"
#include "dsmsr/error.hpp"

namespace dsmsr {

struct BuildingPlacement {
  int row, col, height_px, width_px;
  float height_m;
};

struct TreePlacement {
  double center_row, center_col, radius;
  float height_m;
};

struct SceneLayout {
  std::vector<BuildingPlacement> buildings;
  std::vector<TreePlacement> trees;
};

struct SyntheticScene {
  ScenePair pair;
  SceneLayout layout;
};

namespace detail {

inline float quantize8(double v) {
  const int k = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  return static_cast<float>(k) / 255.0f;
}

// Smooth random field in roughly [-1, 1] from a handful of plane waves.
struct WaveField {
  struct Wave {
    double kx, ky, phase, amp;
  };
  std::vector<Wave> waves;

  WaveField(std::mt19937_64& rng, int count, double min_period, double max_period) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double total = 0;
    for (int i = 0; i < count; ++i) {
      const double period = min_period + (max_period - min_period) * u(rng);
      const double angle = 2 * std::numbers::pi * u(rng);
      const double k = 2 * std::numbers::pi / period;
      waves.push_back({k * std::cos(angle), k * std::sin(angle), 2 * std::numbers::pi * u(rng), 0.5 + u(rng)});
      total += waves.back().amp;
    }
    for (auto& w : waves) w.amp /= total;
  }

  double operator()(double r, double c) const {
    double v = 0;
    for (const auto& w : waves) v += w.amp * std::sin(w.kx * c + w.ky * r + w.phase);
    return v;
  }
};

}  // namespace detail

inline SyntheticScene generate_scene_with_layout(std::uint64_t seed, int size) {
  if (size < 64 || size % 8 != 0) {
    throw UsageError("scene size must be >= 64 and divisible by 8, got " + std::to_string(size));
  }
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 0x5CE7EULL);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  auto uint_in = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  const int S = size;
  const auto idx = [S](int r, int c) { return static_cast<std::size_t>(r) * S + c; };
  std::vector<double> height(static_cast<std::size_t>(S) * S, 0.0);
  std::vector<std::uint8_t> kind(height.size(), 0);  // 0 ground, 1 road, 2 tree, 3 building
  std::vector<double> shade(height.size(), 1.0);
  std::vector<std::array<double, 3>> base(height.size());

  // Ground: soil/grass blend with smooth variation.
  const detail::WaveField blend(rng, 5, 40.0, 140.0);
  const detail::WaveField tone(rng, 4, 12.0, 40.0);
  const std::array<double, 3> soil{uni(0.50, 0.62), uni(0.42, 0.50), uni(0.30, 0.38)};
  const std::array<double, 3> grass{uni(0.30, 0.40), uni(0.45, 0.55), uni(0.22, 0.30)};
  for (int r = 0; r < S; ++r)
    for (int c = 0; c < S; ++c) {
      const double t = 0.5 + 0.5 * blend(r, c);
      const double v = 0.04 * tone(r, c);
      for (int k = 0; k < 3; ++k) base[idx(r, c)][k] = t * soil[k] + (1 - t) * grass[k] + v;
    }

  // Roads: straight asphalt strips with a centre line.
  const int roads = uint_in(1, 2);
  for (int i = 0; i < roads; ++i) {
    const bool vertical = u(rng) < 0.5;
    const int width = uint_in(6, 10);
    const int pos = uint_in(width, S - 2 * width);
    const double gray = uni(0.28, 0.38);
    for (int a = 0; a < S; ++a)
      for (int b = pos; b < pos + width; ++b) {
        const int r = vertical ? a : b, c = vertical ? b : a;
        const bool marking = (b == pos + width / 2) && ((a / 6) % 2 == 0);
        const double v = marking ? 0.85 : gray;
        base[idx(r, c)] = {v, v, v * 1.02};
        kind[idx(r, c)] = 1;
      }
  }

  SceneLayout layout;
  const double area = static_cast<double>(S) * S;

  // Trees (dome profile), drawn before buildings.
  const int tree_count = std::max(2, static_cast<int>(area / 4000.0 * uni(0.6, 1.4)));
  for (int i = 0; i < tree_count; ++i) {
    TreePlacement t{uni(0, S - 1), uni(0, S - 1), uni(4.0, 10.0), static_cast<float>(uni(2.0, 10.0))};
    layout.trees.push_back(t);
    const std::array<double, 3> crown{uni(0.12, 0.20), uni(0.28, 0.40), uni(0.10, 0.16)};
    const int r0 = std::max(0, static_cast<int>(t.center_row - t.radius));
    const int r1 = std::min(S - 1, static_cast<int>(t.center_row + t.radius) + 1);
    const int c0 = std::max(0, static_cast<int>(t.center_col - t.radius));
    const int c1 = std::min(S - 1, static_cast<int>(t.center_col + t.radius) + 1);
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const double d = std::hypot(r - t.center_row, c - t.center_col) / t.radius;
        if (d >= 1.0) continue;
        const double h = t.height_m * std::sqrt(1.0 - d * d);
        if (h <= height[idx(r, c)]) continue;
        height[idx(r, c)] = h;
        kind[idx(r, c)] = 2;
        const double leaf = 0.06 * (u(rng) - 0.5);
        const double lit = 0.75 + 0.35 * (h / t.height_m);
        for (int k = 0; k < 3; ++k) base[idx(r, c)][k] = crown[k] * lit + leaf;
      }
  }

  // Buildings: non-overlapping flat roofs with a gable shading split.
  const int building_target = std::max(2, static_cast<int>(area / 6000.0 * uni(0.7, 1.3)));
  for (int attempt = 0; attempt < 200 && static_cast<int>(layout.buildings.size()) < building_target; ++attempt) {
    const int bh = uint_in(12, std::min(40, S / 3));
    const int bw = uint_in(12, std::min(40, S / 3));
    const int row = uint_in(0, S - bh);
    const int col = uint_in(0, S - bw);
    bool clear = true;
    for (const auto& b : layout.buildings) {
      if (row < b.row + b.height_px + 2 && b.row < row + bh + 2 && col < b.col + b.width_px + 2 &&
          b.col < col + bw + 2) {
        clear = false;
        break;
      }
    }
    if (!clear) continue;
    const auto h = static_cast<float>(uni(3.0, 20.0));
    layout.buildings.push_back({row, col, bh, bw, h});
    const double lift = 0.012 * h;
    const std::array<double, 3> roof = u(rng) < 0.5 ? std::array<double, 3>{0.55 + lift, 0.30 + lift, 0.24 + lift}
                                                    : std::array<double, 3>{0.50 + lift, 0.50 + lift, 0.52 + lift};
    const bool ridge_vertical = bw > bh;
    for (int r = row; r < row + bh; ++r)
      for (int c = col; c < col + bw; ++c) {
        height[idx(r, c)] = h;
        kind[idx(r, c)] = 3;
        const bool far_side = ridge_vertical ? (c - col) * 2 >= bw : (r - row) * 2 >= bh;
        const bool rim = r == row || c == col || r == row + bh - 1 || c == col + bw - 1;
        const double f = rim ? 0.8 : far_side ? 0.86 : 1.08;
        for (int k = 0; k < 3; ++k) base[idx(r, c)][k] = roof[k] * f;
      }
  }

  // Shadows: sun from the upper left; a cell is shaded when something along
  // the sun ray rises above the ray.
  constexpr double kPxPerMeter = 0.6;
  for (int r = 0; r < S; ++r)
    for (int c = 0; c < S; ++c) {
      const double here = height[idx(r, c)];
      for (int t = 1; t <= 14; ++t) {
        const int rr = r - t, cc = c - t;
        if (rr < 0 || cc < 0) break;
        if (height[idx(rr, cc)] - here > t * std::numbers::sqrt2 / kPxPerMeter) {
          shade[idx(r, c)] = 0.55;
          break;
        }
      }
    }

  RasterGrid rgb(S, S, 3);
  RasterGrid ndsm(S, S, 1);
  std::normal_distribution<double> grain(0.0, 0.008);
  for (int r = 0; r < S; ++r)
    for (int c = 0; c < S; ++c) {
      for (int k = 0; k < 3; ++k) rgb.at(k, r, c) = detail::quantize8(base[idx(r, c)][k] * shade[idx(r, c)] + grain(rng));
      ndsm.at(0, r, c) = static_cast<float>(height[idx(r, c)]);
    }

  GeoInfo geo;
  geo.crs = "EPSG:2169";
  geo.pixel_w = 0.2;
  geo.pixel_h = -0.2;
  geo.origin_x = 70000.0 + 200.0 * static_cast<double>(seed % 97);
  geo.origin_y = 90000.0 - 200.0 * static_cast<double>((seed / 97) % 97);
  rgb.geo = geo;
  ndsm.geo = geo;

  SyntheticScene scene{{std::move(rgb), std::move(ndsm), "scene_" + std::to_string(seed)}, std::move(layout)};
  return scene;
}

inline ScenePair generate_scene(std::uint64_t seed, int size) { return generate_scene_with_layout(seed, size).pair; }

}  // namespace dsmsr
