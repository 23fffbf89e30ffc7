// dsmsr: synthetic data, training, tiled inference, evaluation and the
// alignment ablation from the command line.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 checkpoint error.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dsmsr/commands.hpp"

namespace {

std::vector<std::pair<std::string, std::filesystem::path>> parse_extra(const std::vector<std::string>& specs) {
  std::vector<std::pair<std::string, std::filesystem::path>> out;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw dsmsr::UsageError("--extra expects NAME=DIR, got '" + s + "'");
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

void print_kv(const dsmsr::KeyValues& kv) {
  for (const auto& [k, v] : kv) std::cout << k << " = " << v << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Super-resolution of aerial imagery with a height-map consistency loss"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out;
  app.add_option("--seed", seed, "Seed for every random draw");
  app.add_option("--config", config_path, "Training config file (key = value)");
  app.add_option("--out", out, "Output directory or file");

  auto* synth = app.add_subcommand("synth", "Generate synthetic aerial scenes with height maps");
  int count = 0, size = 256;
  synth->add_option("--count", count, "Number of scenes")->required();
  synth->add_option("--size", size, "Scene edge length in pixels")->capture_default_str();

  auto* train = app.add_subcommand("train", "Run training phases into a checkpoint directory");
  std::string data_dir, phase = "all";
  train->add_option("--data", data_dir, "Dataset directory with manifest.jsonl")->required();
  train->add_option("--phase", phase, "ndsm, sr-pretrain, gan or all")->capture_default_str();

  auto* infer = app.add_subcommand("infer", "Super-resolve an RGB raster");
  std::string generator, input, blend = "feather";
  int tile_px = 512, overlap_px = 64;
  infer->add_option("--generator", generator, "Generator bundle")->required();
  infer->add_option("--input", input, "Low-resolution RGB raster")->required();
  infer->add_option("--tile", tile_px, "Tile size in output pixels")->capture_default_str();
  infer->add_option("--overlap", overlap_px, "Tile overlap in output pixels")->capture_default_str();
  infer->add_option("--blend", blend, "feather or crop-center")->capture_default_str();

  auto* evaluate = app.add_subcommand("evaluate", "PSNR/SSIM report for id-matched rasters");
  std::string sr_dir, hr_dir, lr_dir;
  std::vector<std::string> extra;
  evaluate->add_option("--sr", sr_dir, "Super-resolved rasters")->required();
  evaluate->add_option("--hr", hr_dir, "Ground-truth rasters")->required();
  evaluate->add_option("--lr", lr_dir, "Low-resolution inputs; adds a bicubic column");
  evaluate->add_option("--extra", extra, "Additional column as NAME=DIR");

  auto* ablate = app.add_subcommand("ablate-alignment", "Train on perturbed height maps next to a reference run");
  std::string mode = "constant_shift", direction = "right";
  int shift_px = 2;
  double max_rotation = 0, max_skew = 0;
  ablate->add_option("--data", data_dir, "Dataset directory with manifest.jsonl")->required();
  ablate->add_option("--mode", mode, "identity, constant_shift or random_transform")->capture_default_str();
  ablate->add_option("--shift", shift_px, "Shift in pixels")->capture_default_str();
  ablate->add_option("--direction", direction, "up, down, left, right or random")->capture_default_str();
  ablate->add_option("--max-rotation", max_rotation, "Largest rotation in degrees");
  ablate->add_option("--max-skew", max_skew, "Largest horizontal shear factor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    auto require_out = [&]() -> std::filesystem::path {
      if (out.empty()) throw dsmsr::UsageError("--out is required");
      return out;
    };
    auto load_config = [&]() {
      dsmsr::TrainConfig cfg;
      if (!config_path.empty()) cfg = dsmsr::load_train_config(config_path);
      if (seed) cfg.seed = *seed;
      cfg.sync();
      cfg.validate();
      return cfg;
    };

    if (*synth) {
      const auto s = dsmsr::cmd_synth(seed.value_or(0), count, size, require_out());
      std::cout << "wrote " << count << " scenes (train " << s.train << ", val " << s.val << ", test " << s.test
                << ")\n";
    } else if (*train) {
      const auto cfg = load_config();
      const auto p = dsmsr::parse_train_phase(phase);
      print_kv(dsmsr::cmd_train(cfg, data_dir, require_out(), p));
    } else if (*infer) {
      const dsmsr::TileSpec tiles{tile_px, overlap_px, dsmsr::parse_blend(blend)};
      const auto sr = dsmsr::cmd_infer(generator, input, require_out(), tiles);
      std::cout << "wrote " << sr.height << "x" << sr.width << " raster to " << out << "\n";
    } else if (*evaluate) {
      std::optional<std::filesystem::path> lr;
      if (!lr_dir.empty()) lr = lr_dir;
      const auto r = dsmsr::cmd_evaluate(sr_dir, hr_dir, require_out(), lr, parse_extra(extra));
      std::cout << r.table;
    } else if (*ablate) {
      const auto cfg = load_config();
      dsmsr::PerturbSpec spec;
      spec.mode = dsmsr::parse_perturb_mode(mode);
      spec.shift_px = spec.mode == dsmsr::PerturbMode::constant_shift ? shift_px : 0;
      spec.direction = dsmsr::parse_direction(direction);
      spec.max_rotation_deg = max_rotation;
      spec.max_skew = max_skew;
      spec.rng_seed = cfg.seed;
      std::cout << dsmsr::cmd_ablate_alignment(data_dir, cfg, spec, require_out()).table;
    }
  } catch (const dsmsr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(dsmsr::ErrorKind::data);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(dsmsr::ErrorKind::data);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
