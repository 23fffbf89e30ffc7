#pragma once

// Whole-scene evaluation used for validation and held-out reports.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dsmsr/data/raster.hpp"
#include "dsmsr/data/resample.hpp"
#include "dsmsr/error.hpp"
#include "dsmsr/metrics.hpp"
#include "dsmsr/models/generator.hpp"
#include "dsmsr/models/ndsm_net.hpp"

namespace dsmsr {

// Top-left crop to the largest extent divisible by `m`.
inline RasterGrid crop_to_multiple(const RasterGrid& g, int m) {
  const int h = g.height / m * m, w = g.width / m * m;
  if (h == 0 || w == 0) throw DataError("raster smaller than " + std::to_string(m) + " px");
  if (h == g.height && w == g.width) return g;
  return g.window(0, 0, h, w);
}

inline RasterGrid clamp_unit(RasterGrid g) {
  for (auto& v : g.values) v = std::clamp(v, 0.0f, 1.0f);
  return g;
}

// Single-pass super-resolution of a whole raster.
template <typename T>
RasterGrid super_resolve(const Generator<T>& gen, const RasterGrid& lr) {
  if (lr.channels != 3) throw DataError("input raster must have 3 channels, got " + std::to_string(lr.channels));
  RasterGrid out = from_batch(gen.infer(to_batch<T>(lr)), 0);
  if (lr.geo) {
    GeoInfo g = *lr.geo;
    const int s = gen.config().scale;
    g.pixel_w /= s;
    g.pixel_h /= s;
    out.geo = g;
  }
  return out;
}

struct NdsmValidation {
  double mae = 0;       // meters
  double zero_mae = 0;  // MAE of predicting 0 everywhere
};

template <typename T>
NdsmValidation validate_ndsm(const NdsmNet<T>& net, const std::vector<const ScenePair*>& scenes) {
  if (scenes.empty()) throw DataError("no validation scenes");
  const int m = net.config().spatial_multiple();
  double err = 0, zero = 0, count = 0;
  for (const ScenePair* s : scenes) {
    const RasterGrid rgb = crop_to_multiple(s->rgb, m);
    const RasterGrid truth = crop_to_multiple(s->ndsm, m);
    const Tensor<T> pred = net.infer(to_batch<T>(rgb));
    for (std::size_t i = 0; i < truth.values.size(); ++i) {
      err += std::abs(double(pred[i]) - truth.values[i]);
      zero += std::abs(double(truth.values[i]));
    }
    count += static_cast<double>(truth.values.size());
  }
  return {err / count, zero / count};
}

struct SceneTriple {
  RasterGrid hr;       // cropped to a multiple of the scale
  RasterGrid lr;
  RasterGrid bicubic;  // bicubic upsample of lr, clamped to [0, 1]
  std::string id;
};

inline std::vector<SceneTriple> make_triples(const std::vector<const ScenePair*>& scenes, int scale) {
  std::vector<SceneTriple> out;
  for (const ScenePair* s : scenes) {
    SceneTriple t;
    t.hr = crop_to_multiple(s->rgb, scale);
    t.lr = bicubic_downsample(t.hr, scale);
    t.bicubic = clamp_unit(bicubic_upsample(t.lr, scale));
    t.id = s->id;
    out.push_back(std::move(t));
  }
  return out;
}

// Mean absolute pixel error of the generator over whole scenes.
template <typename T>
double generator_mae(const Generator<T>& gen, const std::vector<SceneTriple>& triples) {
  if (triples.empty()) throw DataError("no scenes to evaluate");
  double err = 0, count = 0;
  for (const auto& t : triples) {
    const RasterGrid sr = super_resolve(gen, t.lr);
    for (std::size_t i = 0; i < sr.values.size(); ++i) err += std::abs(double(sr.values[i]) - t.hr.values[i]);
    count += static_cast<double>(sr.values.size());
  }
  return err / count;
}

struct SrComparison {
  MetricReport sr;
  MetricReport bicubic;
};

template <typename T>
SrComparison compare_with_bicubic(const Generator<T>& gen, const std::vector<SceneTriple>& triples,
                                  const SsimParams& params = {}) {
  std::vector<RasterGrid> srs;
  srs.reserve(triples.size());
  for (const auto& t : triples) srs.push_back(super_resolve(gen, t.lr));
  std::vector<EvalPair> a, b;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    a.push_back({&srs[i], &triples[i].hr, triples[i].id});
    b.push_back({&triples[i].bicubic, &triples[i].hr, triples[i].id});
  }
  return {evaluate_pairs(a, params), evaluate_pairs(b, params)};
}

}  // namespace dsmsr
