#pragma once

// Training batches as a pure function of (seed, phase, step).

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dsmsr/data/patches.hpp"
#include "dsmsr/data/raster.hpp"
#include "dsmsr/data/resample.hpp"
#include "dsmsr/error.hpp"
#include "dsmsr/tensor.hpp"

namespace dsmsr {

enum class Phase { ndsm, sr_pretrain, gan };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::ndsm: return "ndsm";
    case Phase::sr_pretrain: return "sr-pretrain";
    case Phase::gan: return "gan";
  }
  return "?";
}

// Key prefix used in checkpoint manifests and optimizer state.
inline const char* phase_key(Phase p) {
  switch (p) {
    case Phase::ndsm: return "ndsm";
    case Phase::sr_pretrain: return "sr_pretrain";
    case Phase::gan: return "gan";
  }
  return "?";
}

struct Batch {
  Tensor<float> lr;    // empty for the ndsm phase
  Tensor<float> hr;
  Tensor<float> ndsm;
  std::uint64_t fingerprint = 0;  // hash of the source windows
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t batch_seed(std::uint64_t seed, Phase phase, std::int64_t step) {
  return splitmix64(splitmix64(seed) ^ splitmix64(0x1000 + static_cast<std::uint64_t>(phase)) ^
                    splitmix64(static_cast<std::uint64_t>(step) * 0x2545F4914F6CDD1DULL));
}

namespace detail {
inline void mix_fingerprint(std::uint64_t& h, std::uint64_t v) { h = splitmix64(h ^ v); }

inline Batch assemble(const std::vector<PatchPair>& pairs, bool with_lr) {
  std::vector<const RasterGrid*> lr, hr, nd;
  for (const auto& p : pairs) {
    lr.push_back(&p.lr);
    hr.push_back(&p.hr);
    nd.push_back(&p.hr_ndsm);
  }
  Batch b;
  if (with_lr) b.lr = to_batch<float>(lr);
  b.hr = to_batch<float>(hr);
  b.ndsm = to_batch<float>(nd);
  return b;
}
}  // namespace detail

// Random windows from a fixed list of scenes.
class SceneSampler {
 public:
  SceneSampler(std::vector<const ScenePair*> scenes, int patch_px, int scale, int batch_size, std::uint64_t seed)
      : scenes_(std::move(scenes)), patch_px_(patch_px), scale_(scale), batch_(batch_size), seed_(seed) {
    if (scenes_.empty()) throw DataError("no training scenes");
  }

  Batch at(Phase phase, std::int64_t step) const {
    std::mt19937_64 rng(batch_seed(seed_, phase, step));
    std::uniform_int_distribution<std::size_t> pick(0, scenes_.size() - 1);
    std::vector<PatchPair> pairs;
    std::uint64_t fp = 0;
    const bool with_lr = phase != Phase::ndsm;
    for (int i = 0; i < batch_; ++i) {
      const ScenePair& s = *scenes_[pick(rng)];
      const Window w = sample_windows(s, patch_px_, 1, rng()).front();
      Crop c{s.rgb.window(w.row, w.col, patch_px_, patch_px_), s.ndsm.window(w.row, w.col, patch_px_, patch_px_),
             w.row, w.col};
      detail::mix_fingerprint(fp, fnv(s.id));
      detail::mix_fingerprint(fp, static_cast<std::uint64_t>(w.row) << 32 | static_cast<std::uint32_t>(w.col));
      if (with_lr) {
        pairs.push_back(make_pair(c, scale_));
      } else {
        PatchPair pp;
        pp.hr = std::move(c.hr);
        pp.hr_ndsm = std::move(c.hr_ndsm);
        pp.scale = scale_;
        pairs.push_back(std::move(pp));
      }
    }
    Batch b = detail::assemble(pairs, with_lr);
    b.fingerprint = fp;
    return b;
  }

 private:
  static std::uint64_t fnv(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }

  std::vector<const ScenePair*> scenes_;
  int patch_px_, scale_, batch_;
  std::uint64_t seed_;
};

// Cycles through a fixed patch list in order; used for overfitting checks.
class FixedPatches {
 public:
  FixedPatches(std::vector<PatchPair> patches, int batch_size) : patches_(std::move(patches)), batch_(batch_size) {
    if (patches_.empty()) throw DataError("no patches");
  }

  Batch at(Phase phase, std::int64_t step) const {
    std::vector<PatchPair> pairs;
    std::uint64_t fp = 0;
    for (int i = 0; i < batch_; ++i) {
      const std::size_t k = (static_cast<std::size_t>(step) * batch_ + i) % patches_.size();
      pairs.push_back(patches_[k]);
      detail::mix_fingerprint(fp, k);
    }
    Batch b = detail::assemble(pairs, phase != Phase::ndsm);
    b.fingerprint = fp;
    return b;
  }

  const std::vector<PatchPair>& patches() const { return patches_; }

 private:
  std::vector<PatchPair> patches_;
  int batch_;
};

}  // namespace dsmsr
