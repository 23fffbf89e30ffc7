#pragma once

// Library form of the command-line workflow. Every command reports failures
// through dsmsr::Error so the CLI can map them onto exit codes.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dsmsr/data/dataset.hpp"
#include "dsmsr/data/perturb.hpp"
#include "dsmsr/data/raster_io.hpp"
#include "dsmsr/data/resample.hpp"
#include "dsmsr/data/synth.hpp"
#include "dsmsr/error.hpp"
#include "dsmsr/inference.hpp"
#include "dsmsr/metrics.hpp"
#include "dsmsr/models/bundle.hpp"
#include "dsmsr/training/batches.hpp"
#include "dsmsr/training/config.hpp"
#include "dsmsr/training/evaluation.hpp"
#include "dsmsr/training/trainer.hpp"
#include "dsmsr/util/files.hpp"

namespace dsmsr {

namespace fs = std::filesystem;

namespace detail {
inline void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory '" + dir.string() + "'");
}

inline bool is_raster_file(const fs::path& p) {
  auto ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".tif" || ext == ".tiff" || ext == ".png" || ext == ".ndsm";
}

// Raster files of a directory keyed by file stem.
inline std::map<std::string, fs::path> rasters_by_id(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("'" + dir.string() + "' is not a directory");
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || !is_raster_file(e.path())) continue;
    const auto id = e.path().stem().string();
    if (!out.emplace(id, e.path()).second) throw DataError("duplicate raster id '" + id + "' in " + dir.string());
  }
  return out;
}
}  // namespace detail

inline constexpr int kMaxSynthCount = 10000;

struct SynthSummary {
  int train = 0, val = 0, test = 0;
};

// Scenes are written as <out>/rgb/<id>.tif (8-bit) and <out>/ndsm/<id>.tif
// (float32 meters) plus manifest.jsonl.
inline SynthSummary cmd_synth(std::uint64_t seed, int count, int size, const fs::path& out_dir) {
  if (count < 1) throw UsageError("count must be >= 1");
  if (count > kMaxSynthCount) throw UsageError("count must be <= " + std::to_string(kMaxSynthCount));
  if (size < 64 || size % 8 != 0) throw UsageError("scene size must be >= 64 and divisible by 8");
  detail::make_dirs(out_dir / "rgb");
  detail::make_dirs(out_dir / "ndsm");
  std::vector<std::string> ids;
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < count; ++i) {
    const ScenePair s = generate_scene(seed * kMaxSynthCount + static_cast<std::uint64_t>(i), size);
    const std::string rgb = "rgb/" + s.id + ".tif", ndsm = "ndsm/" + s.id + ".tif";
    save_geotiff(s.rgb, out_dir / rgb, SampleEncoding::uint8);
    save_geotiff(s.ndsm, out_dir / ndsm, SampleEncoding::float32);
    ids.push_back(s.id);
    entries.push_back({s.id, rgb, ndsm, Split::train});
  }
  const auto splits = assign_splits(ids);
  SynthSummary sum;
  for (auto& e : entries) {
    e.split = splits.at(e.id);
    (e.split == Split::train ? sum.train : e.split == Split::val ? sum.val : sum.test)++;
  }
  write_manifest(entries, out_dir / kManifestName);
  return sum;
}

enum class TrainPhase { ndsm, sr_pretrain, gan, all };

inline TrainPhase parse_train_phase(const std::string& s) {
  if (s == "ndsm") return TrainPhase::ndsm;
  if (s == "sr-pretrain") return TrainPhase::sr_pretrain;
  if (s == "gan") return TrainPhase::gan;
  if (s == "all") return TrainPhase::all;
  throw UsageError("unknown phase '" + s + "' (ndsm, sr-pretrain, gan or all)");
}

// Runs the requested phases against a checkpoint directory, resuming whatever
// it already holds.
inline void run_training(Trainer& t, const Dataset& ds, TrainPhase phase) {
  const TrainConfig& cfg = t.config();
  const auto train = ds.train();
  if (train.empty()) throw DataError("dataset has no training scenes");
  const SceneSampler sampler(train, cfg.patch_px, cfg.scale, cfg.batch_size, cfg.seed);
  const auto val = ds.val();
  if (phase == TrainPhase::ndsm || phase == TrainPhase::all) t.train_ndsm(sampler, val, train);
  if (phase == TrainPhase::sr_pretrain || phase == TrainPhase::all) t.pretrain_generator(sampler, val);
  if (phase == TrainPhase::gan || phase == TrainPhase::all) t.train_gan(sampler);
}

inline KeyValues cmd_train(const TrainConfig& cfg, const fs::path& data_dir, const fs::path& out_dir,
                           TrainPhase phase) {
  const Dataset ds = load_dataset(data_dir);
  Trainer t(cfg, out_dir);
  run_training(t, ds, phase);
  return t.manifest();
}

inline RasterGrid cmd_infer(const fs::path& generator_bundle, const fs::path& in_raster, const fs::path& out_raster,
                            const TileSpec& tiles) {
  const Generator<float> gen = generator_from(load_bundle(generator_bundle));
  const RasterGrid lr = load_raster(in_raster);
  if (lr.channels != 3) throw DataError("input raster must have 3 channels, got " + std::to_string(lr.channels));
  const RasterGrid sr = tiled_super_resolve(gen, lr, tiles);
  save_raster(sr, out_raster, SampleEncoding::float32);
  return sr;
}

struct EvaluationOutput {
  std::vector<std::pair<std::string, MetricReport>> columns;  // "SR" first
  std::string table;
};

// Compares id-matched rasters. With `lr_dir`, a bicubic column is added from
// the LR inputs; `extra` adds further SR directories as named columns.
inline EvaluationOutput cmd_evaluate(const fs::path& sr_dir, const fs::path& hr_dir, const fs::path& report_dir,
                                     const std::optional<fs::path>& lr_dir = std::nullopt,
                                     const std::vector<std::pair<std::string, fs::path>>& extra = {}) {
  const auto hr = detail::rasters_by_id(hr_dir);
  std::vector<std::pair<std::string, std::map<std::string, fs::path>>> sources{{"SR", detail::rasters_by_id(sr_dir)}};
  if (lr_dir) sources.emplace_back("BICUBIC", detail::rasters_by_id(*lr_dir));
  for (const auto& [name, dir] : extra) {
    if (name.empty() || name == "SR" || name == "BICUBIC") throw UsageError("invalid column name '" + name + "'");
    sources.emplace_back(name, detail::rasters_by_id(dir));
  }
  if (hr.empty()) throw DataError("no rasters in '" + hr_dir.string() + "'");
  std::string unmatched;
  for (const auto& [name, files] : sources) {
    for (const auto& [id, p] : hr)
      if (!files.count(id)) unmatched += " " + id + " (missing from " + name + ")";
    for (const auto& [id, p] : files)
      if (!hr.count(id)) unmatched += " " + id + " (missing from HR)";
  }
  if (!unmatched.empty()) throw DataError("unmatched ids:" + unmatched);

  EvaluationOutput out;
  std::map<std::string, RasterGrid> hr_grids;
  for (const auto& [id, p] : hr) hr_grids[id] = load_raster(p);
  for (const auto& [name, files] : sources) {
    std::vector<RasterGrid> grids;
    std::vector<std::string> ids;
    for (const auto& [id, p] : files) {
      RasterGrid g = load_raster(p);
      if (name == "BICUBIC") {
        const RasterGrid& h = hr_grids.at(id);
        if (h.height % g.height != 0 || h.width % g.width != 0 || h.height / g.height != h.width / g.width) {
          throw DataError("LR raster " + id + " is not an integer downscale of its HR raster");
        }
        g = clamp_unit(bicubic_upsample(g, h.height / g.height));
      }
      grids.push_back(std::move(g));
      ids.push_back(id);
    }
    std::vector<EvalPair> pairs;
    for (std::size_t i = 0; i < grids.size(); ++i) pairs.push_back({&grids[i], &hr_grids.at(ids[i]), ids[i]});
    out.columns.emplace_back(name, evaluate_pairs(pairs));
  }
  std::vector<std::pair<std::string, const MetricReport*>> cols;
  for (const auto& [name, r] : out.columns) cols.emplace_back(name, &r);
  out.table = format_table(cols);
  detail::make_dirs(report_dir);
  atomic_write(report_dir / "report.txt", out.table);
  for (const auto& [name, r] : out.columns) {
    std::string file = name;
    for (auto& c : file) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    atomic_write(report_dir / (file + ".jsonl"), to_records(r));
  }
  return out;
}

// Same scenes with every ndsm perturbed. Each scene gets its own draw.
inline Dataset perturb_dataset(const Dataset& ds, const PerturbSpec& spec) {
  spec.validate();
  Dataset out = ds;
  for (auto& s : out.scenes) {
    PerturbSpec per = spec;
    per.rng_seed = splitmix64(spec.rng_seed ^ fnv1a(s.id));
    s.ndsm = perturb_ndsm(s.ndsm, per);
  }
  return out;
}

struct AblationOutput {
  MetricReport reference;
  MetricReport perturbed;
  std::string table;
};

// Held-out scenes for reports: test, else val, else train.
inline std::vector<const ScenePair*> held_out(const Dataset& ds) {
  auto s = ds.test();
  if (s.empty()) s = ds.val();
  if (s.empty()) s = ds.train();
  return s;
}

inline AblationOutput ablate_alignment(const Dataset& ds, const TrainConfig& cfg, const PerturbSpec& spec,
                                       const fs::path& out_dir) {
  spec.validate();
  const Dataset perturbed = perturb_dataset(ds, spec);
  auto run = [&](const Dataset& d, const fs::path& dir) {
    Trainer t(cfg, dir);
    run_training(t, d, TrainPhase::all);
    const auto triples = make_triples(held_out(d), cfg.scale);
    return compare_with_bicubic(t.generator(), triples).sr;
  };
  AblationOutput out;
  out.reference = run(ds, out_dir.empty() ? fs::path() : out_dir / "reference");
  out.perturbed = run(perturbed, out_dir.empty() ? fs::path() : out_dir / "perturbed");
  out.table = format_table({{"reference", &out.reference}, {"perturbed", &out.perturbed}});
  if (!out_dir.empty()) {
    detail::make_dirs(out_dir);
    std::string header = std::string("perturbation: ") + to_string(spec.mode);
    if (spec.mode == PerturbMode::constant_shift) {
      header += " shift_px=" + std::to_string(spec.shift_px) + " direction=" + to_string(spec.direction);
    } else if (spec.mode == PerturbMode::random_transform) {
      header += " max_rotation_deg=" + format_double(spec.max_rotation_deg) +
                " max_skew=" + format_double(spec.max_skew);
    }
    atomic_write(out_dir / "report.txt", header + "\n" + out.table);
    atomic_write(out_dir / "reference.jsonl", to_records(out.reference));
    atomic_write(out_dir / "perturbed.jsonl", to_records(out.perturbed));
  }
  return out;
}

inline AblationOutput cmd_ablate_alignment(const fs::path& data_dir, const TrainConfig& cfg, const PerturbSpec& spec,
                                           const fs::path& out_dir) {
  spec.validate();
  return ablate_alignment(load_dataset(data_dir), cfg, spec, out_dir);
}

}  // namespace dsmsr
