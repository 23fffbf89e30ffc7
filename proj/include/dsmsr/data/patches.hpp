#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dsmsr/data/raster.hpp"
#include "dsmsr/data/resample.hpp"
#include "dsmsr/error.hpp"

namespace dsmsr {

struct Crop {
  RasterGrid hr;
  RasterGrid hr_ndsm;
  int row = 0;
  int col = 0;
};

struct Window {
  int row = 0;
  int col = 0;
  bool operator==(const Window&) const = default;
};

namespace detail {
inline bool window_has_nodata(const RasterGrid& g, const Window& w, int px) {
  if (!g.nodata_mask) return false;
  for (int r = 0; r < px; ++r)
    for (int c = 0; c < px; ++c)
      if (g.is_nodata(w.row + r, w.col + c)) return true;
  return false;
}
}  // namespace detail

// Draws `count` square windows that contain no nodata cell in either raster.
inline std::vector<Window> sample_windows(const ScenePair& scene, int patch_px, int count, std::uint64_t rng_seed) {
  if (count < 1) throw UsageError("crop count must be >= 1");
  if (patch_px < 1) throw UsageError("patch size must be >= 1");
  if (scene.rgb.height < patch_px || scene.rgb.width < patch_px) {
    throw DataError("scene " + scene.id + " (" + std::to_string(scene.rgb.height) + "x" +
                    std::to_string(scene.rgb.width) + ") is smaller than patch size " + std::to_string(patch_px));
  }
  std::mt19937_64 rng(rng_seed);
  std::uniform_int_distribution<int> rows(0, scene.rgb.height - patch_px);
  std::uniform_int_distribution<int> cols(0, scene.rgb.width - patch_px);
  std::vector<Window> out;
  const int max_attempts = 100 * count;
  for (int attempt = 0; attempt < max_attempts && static_cast<int>(out.size()) < count; ++attempt) {
    Window w{rows(rng), cols(rng)};
    if (detail::window_has_nodata(scene.rgb, w, patch_px) || detail::window_has_nodata(scene.ndsm, w, patch_px)) {
      continue;
    }
    out.push_back(w);
  }
  if (static_cast<int>(out.size()) < count) {
    throw DataError("scene " + scene.id + ": could not find " + std::to_string(count) + " nodata-free windows");
  }
  return out;
}

inline std::vector<Crop> crop_patches(const ScenePair& scene, int patch_px, int count, std::uint64_t rng_seed) {
  std::vector<Crop> crops;
  for (const Window& w : sample_windows(scene, patch_px, count, rng_seed)) {
    crops.push_back({scene.rgb.window(w.row, w.col, patch_px, patch_px),
                     scene.ndsm.window(w.row, w.col, patch_px, patch_px), w.row, w.col});
  }
  return crops;
}

inline PatchPair make_pair(const Crop& crop, int scale) {
  if (scale != 4 && scale != 8) throw UsageError("scale must be 4 or 8, got " + std::to_string(scale));
  return PatchPair{bicubic_downsample(crop.hr, scale), crop.hr, crop.hr_ndsm, scale};
}

inline std::vector<PatchPair> make_pairs(const std::vector<Crop>& crops, int scale) {
  std::vector<PatchPair> out;
  out.reserve(crops.size());
  for (const auto& c : crops) out.push_back(make_pair(c, scale));
  return out;
}

}  // namespace dsmsr
