#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dsmsr/commands.hpp"
#include "support.hpp"

namespace dsmsr {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

struct Run {
  int code = -1;
  std::string output;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run run_cli(const std::string& args, const TempDir& dir) {
  const fs::path log = dir / "cli.log";
  const std::string cmd = std::string("'") + DSMSR_CLI_PATH + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = read_file(log);
  return r;
}

void make_dirs(const TempDir& dir, std::initializer_list<const char*> names) {
  for (const char* n : names) fs::create_directories(dir / n);
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

void write_generator(const fs::path& path) {
  GeneratorConfig c;
  c.scale = 4;
  c.num_blocks = 1;
  c.rrdbs_per_block = 1;
  c.base_channels = 8;
  c.growth_channels = 4;
  c.bicubic_prior = true;
  save_bundle(make_bundle(Generator<float>(c, 3)), path);
}

RasterGrid geo_rgb(int h, int w, std::uint64_t seed) {
  RasterGrid g = testing::random_grid(h, w, 3, seed);
  GeoInfo geo;
  geo.origin_x = 100;
  geo.origin_y = 200;
  geo.pixel_w = 0.2;
  geo.pixel_h = -0.2;
  geo.crs = "EPSG:2169";
  g.geo = geo;
  return g;
}

TEST(Cli, NoSubcommandIsUsageError) {
  TempDir dir("cli_usage");
  EXPECT_EQ(run_cli("", dir).code, 2);
  EXPECT_EQ(run_cli("bogus", dir).code, 2);
  EXPECT_EQ(run_cli("--help", dir).code, 0);
}

TEST(Cli, SynthWritesScenesAndSplits) {
  TempDir dir("cli_synth");
  const auto r = run_cli("synth --seed 7 --count 10 --size 64 --out " + q(dir / "d"), dir);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("train 8, val 1, test 1"), std::string::npos) << r.output;
  const Dataset ds = load_dataset(dir / "d");
  EXPECT_EQ(ds.scenes.size(), 10u);
  EXPECT_EQ(ds.train().size(), 8u);
  EXPECT_EQ(ds.val().size(), 1u);
  EXPECT_EQ(ds.test().size(), 1u);
  for (const auto& s : ds.scenes) {
    EXPECT_EQ(s.rgb.height, 64);
    EXPECT_EQ(s.ndsm.channels, 1);
  }
}

TEST(Cli, SynthIsByteIdenticalForSameSeed) {
  TempDir dir("cli_synth_det");
  ASSERT_EQ(run_cli("synth --seed 7 --count 3 --size 64 --out " + q(dir / "a"), dir).code, 0);
  ASSERT_EQ(run_cli("synth --seed 7 --count 3 --size 64 --out " + q(dir / "b"), dir).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "a");
    EXPECT_EQ(read_file(e.path()), read_file(dir / "b" / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 7u);
}

TEST(Cli, SynthRejectsBadCount) {
  TempDir dir("cli_synth_bad");
  const auto r = run_cli("synth --count 0 --out " + q(dir / "d"), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("count"), std::string::npos);
  EXPECT_EQ(run_cli("synth --count 3 --size 60 --out " + q(dir / "d"), dir).code, 2);
  EXPECT_EQ(run_cli("synth --count 3", dir).code, 2);
}

TEST(Cli, EvaluateIdenticalDirs) {
  TempDir dir("cli_eval");
  fs::create_directories(dir / "hr");
  for (int i = 0; i < 3; ++i) {
    save_geotiff(testing::random_grid(32, 32, 3, i), dir / ("hr/s" + std::to_string(i) + ".tif"),
                 SampleEncoding::float32);
  }
  const auto r = run_cli("evaluate --sr " + q(dir / "hr") + " --hr " + q(dir / "hr") + " --out " + q(dir / "rep"), dir);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rep = parse_records(read_file(dir / "rep" / "sr.jsonl"));
  EXPECT_EQ(rep.per_image.size(), 3u);
  EXPECT_EQ(rep.mean_ssim, 1.0);
  EXPECT_EQ(rep.infinite_psnr_count, 3);
  EXPECT_TRUE(fs::exists(dir / "rep" / "report.txt"));
}

TEST(Cli, EvaluateMissingIdIsDataError) {
  TempDir dir("cli_eval_missing");
  make_dirs(dir, {"hr", "sr"});
  for (int i = 0; i < 3; ++i) {
    const auto g = testing::random_grid(32, 32, 3, i);
    save_geotiff(g, dir / ("hr/s" + std::to_string(i) + ".tif"), SampleEncoding::float32);
    if (i != 1) save_geotiff(g, dir / ("sr/s" + std::to_string(i) + ".tif"), SampleEncoding::float32);
  }
  const auto r = run_cli("evaluate --sr " + q(dir / "sr") + " --hr " + q(dir / "hr") + " --out " + q(dir / "rep"), dir);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.output.find("s1"), std::string::npos) << r.output;
}

TEST(Cli, EvaluateBicubicColumnMatchesBicubicSr) {
  TempDir dir("cli_eval_bicubic");
  make_dirs(dir, {"hr", "lr", "sr"});
  for (int i = 0; i < 2; ++i) {
    const std::string id = "s" + std::to_string(i);
    const RasterGrid hr = testing::smooth_grid(64, 64, 3, 0.3 * i);
    const RasterGrid lr = bicubic_downsample(hr, 4);
    save_geotiff(hr, dir / ("hr/" + id + ".tif"), SampleEncoding::float32);
    save_geotiff(lr, dir / ("lr/" + id + ".tif"), SampleEncoding::float32);
    save_geotiff(clamp_unit(bicubic_upsample(lr, 4)), dir / ("sr/" + id + ".tif"), SampleEncoding::float32);
  }
  const auto r = run_cli("evaluate --sr " + q(dir / "sr") + " --hr " + q(dir / "hr") + " --lr " + q(dir / "lr") +
                             " --out " + q(dir / "rep"),
                         dir);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("BICUBIC PSNR"), std::string::npos) << r.output;
  const auto sr = parse_records(read_file(dir / "rep" / "sr.jsonl"));
  const auto bc = parse_records(read_file(dir / "rep" / "bicubic.jsonl"));
  EXPECT_EQ(sr, bc);
}

TEST(Cli, InferSingleTileGeometryAndGeo) {
  TempDir dir("cli_infer");
  write_generator(dir / "g.bundle");
  save_geotiff(geo_rgb(40, 36, 1), dir / "in.tif", SampleEncoding::float32);
  const auto r = run_cli("infer --generator " + q(dir / "g.bundle") + " --input " + q(dir / "in.tif") +
                             " --tile 512 --out " + q(dir / "out.tif"),
                         dir);
  ASSERT_EQ(r.code, 0) << r.output;
  const RasterGrid out = load_raster(dir / "out.tif");
  EXPECT_EQ(out.height, 160);
  EXPECT_EQ(out.width, 144);
  EXPECT_EQ(out.channels, 3);
  ASSERT_TRUE(out.geo);
  EXPECT_NEAR(out.geo->pixel_w, 0.05, 1e-12);
  EXPECT_NEAR(out.geo->pixel_h, -0.05, 1e-12);
  EXPECT_EQ(out.geo->origin_x, 100);
  EXPECT_EQ(out.geo->crs, "EPSG:2169");
  for (float v : out.values) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST(Cli, InferTiledMatchesLibraryCall) {
  TempDir dir("cli_infer_tiled");
  write_generator(dir / "g.bundle");
  const RasterGrid lr = geo_rgb(40, 40, 2);
  save_geotiff(lr, dir / "in.tif", SampleEncoding::float32);
  const auto r = run_cli("infer --generator " + q(dir / "g.bundle") + " --input " + q(dir / "in.tif") +
                             " --tile 64 --overlap 16 --blend crop-center --out " + q(dir / "out.tif"),
                         dir);
  ASSERT_EQ(r.code, 0) << r.output;
  const RasterGrid out = load_raster(dir / "out.tif");
  const RasterGrid expect =
      tiled_super_resolve(generator_from(load_bundle(dir / "g.bundle")), lr, {64, 16, Blend::crop_center});
  ASSERT_EQ(out.values.size(), expect.values.size());
  EXPECT_EQ(out.values, expect.values);
}

TEST(Tiling, FeatherWeightsSkipInteriorEdges) {
  const auto w = detail::axis_weights(64, 16, true, true);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(w[i], 0.0);
    EXPECT_EQ(w[63 - i], 0.0);
  }
  EXPECT_EQ(w[32], 1.0);
  for (int i = 1; i < 32; ++i) EXPECT_GE(w[i], w[i - 1]);
  const auto edge = detail::axis_weights(64, 16, false, true);
  EXPECT_EQ(edge[0], 1.0);
  EXPECT_EQ(edge[63], 0.0);
}

TEST(Tiling, StartsCoverExtent) {
  EXPECT_EQ(tile_starts(10, 16, 4), (std::vector<int>{0}));
  EXPECT_EQ(tile_starts(40, 16, 4), (std::vector<int>{0, 12, 24}));
  EXPECT_EQ(tile_starts(30, 16, 4), (std::vector<int>{0, 12, 14}));
}

TEST(Tiling, BothBlendsCloseToWholeImage) {
  TempDir dir("tiling");
  write_generator(dir / "g.bundle");
  const auto gen = generator_from(load_bundle(dir / "g.bundle"));
  const RasterGrid lr = geo_rgb(96, 100, 4);
  const RasterGrid whole = super_resolve(gen, lr);
  for (Blend b : {Blend::feather, Blend::crop_center}) {
    const RasterGrid tiled = tiled_super_resolve(gen, lr, {256, 96, b});
    ASSERT_EQ(tiled.values.size(), whole.values.size());
    float worst = 0;
    for (std::size_t i = 0; i < whole.values.size(); ++i) {
      worst = std::max(worst, std::abs(tiled.values[i] - whole.values[i]));
    }
    EXPECT_LT(worst, 1e-3f) << static_cast<int>(b);
  }
  EXPECT_THROW(tiled_super_resolve(gen, lr, {96, 30, Blend::feather}), UsageError);
  EXPECT_THROW(tiled_super_resolve(gen, lr, {64, 32, Blend::feather}), UsageError);
}

TEST(Cli, InferErrors) {
  TempDir dir("cli_infer_err");
  write_generator(dir / "g.bundle");
  save_geotiff(geo_rgb(16, 16, 3), dir / "in.tif", SampleEncoding::float32);
  save_geotiff(RasterGrid(16, 16, 1, 0.5f), dir / "gray.tif", SampleEncoding::float32);
  NdsmNetConfig nc;
  nc.depth = 2;
  nc.base_channels = 4;
  save_bundle(make_bundle(NdsmNet<float>(nc)), dir / "n.bundle");
  const std::string in = " --input " + q(dir / "in.tif") + " --out " + q(dir / "o.tif");
  EXPECT_EQ(run_cli("infer --generator " + q(dir / "n.bundle") + in, dir).code, 4);
  EXPECT_EQ(run_cli("infer --generator " + q(dir / "none.bundle") + in, dir).code, 4);
  EXPECT_EQ(run_cli("infer --generator " + q(dir / "g.bundle") + " --input " + q(dir / "gray.tif") + " --out " +
                        q(dir / "o.tif"),
                    dir)
                .code,
            3);
  EXPECT_EQ(run_cli("infer --generator " + q(dir / "g.bundle") + " --input " + q(dir / "missing.tif") + " --out " +
                        q(dir / "o.tif"),
                    dir)
                .code,
            3);
  EXPECT_EQ(run_cli("infer --generator " + q(dir / "g.bundle") + " --tile 66" + in, dir).code, 2);
  EXPECT_EQ(run_cli("infer --generator " + q(dir / "g.bundle") + " --blend smooth" + in, dir).code, 2);
}

TEST(Cli, TrainGanWithoutPretrainIsCheckpointError) {
  TempDir dir("cli_train_gan");
  ASSERT_EQ(run_cli("synth --seed 3 --count 10 --size 64 --out " + q(dir / "d"), dir).code, 0);
  const fs::path cfg = fs::path(DSMSR_SOURCE_DIR) / "configs" / "tiny.cfg";
  const auto r = run_cli("train --config " + q(cfg) + " --data " + q(dir / "d") + " --phase gan --out " +
                             q(dir / "ck"),
                         dir);
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.output.find("generator pretrain bundle missing"), std::string::npos) << r.output;
}

TEST(Cli, TrainRejectsUnknownConfigKey) {
  TempDir dir("cli_train_cfg");
  std::ofstream(dir / "bad.cfg") << "lr = 0.01\n";
  const auto r = run_cli("train --config " + q(dir / "bad.cfg") + " --data " + q(dir / "d") + " --out " +
                             q(dir / "ck"),
                         dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("lr"), std::string::npos) << r.output;
  EXPECT_EQ(run_cli("train --data " + q(dir / "d") + " --phase warmup --out " + q(dir / "ck"), dir).code, 2);
}

TEST(Cli, TrainMissingDatasetIsDataError) {
  TempDir dir("cli_train_data");
  const fs::path cfg = fs::path(DSMSR_SOURCE_DIR) / "configs" / "tiny.cfg";
  EXPECT_EQ(run_cli("train --config " + q(cfg) + " --data " + q(dir / "nowhere") + " --out " + q(dir / "ck"), dir).code,
            3);
}

TEST(Cli, AblateRejectsZeroMagnitudes) {
  TempDir dir("cli_ablate");
  ASSERT_EQ(run_cli("synth --seed 3 --count 10 --size 64 --out " + q(dir / "d"), dir).code, 0);
  const auto r = run_cli("ablate-alignment --data " + q(dir / "d") +
                             " --mode random_transform --max-rotation 0 --max-skew 0 --out " + q(dir / "ab"),
                         dir);
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_EQ(run_cli("ablate-alignment --data " + q(dir / "d") + " --mode tilt --out " + q(dir / "ab"), dir).code, 2);
}

}  // namespace
}  // namespace dsmsr
