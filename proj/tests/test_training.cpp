#include <gtest/gtest.h>

#include <fstream>

#include "dsmsr/commands.hpp"
#include "dsmsr/training/config.hpp"
#include "dsmsr/training/trainer.hpp"
#include "support.hpp"

namespace dsmsr {
namespace {

using testing::TempDir;

TrainConfig tiny_config() {
  TrainConfig c;
  c.scale = 4;
  c.patch_px = 32;
  c.batch_size = 2;
  c.learning_rate = 1e-3;
  c.ndsm_steps = 4;
  c.pretrain_steps = 4;
  c.gan_steps = 3;
  c.seed = 5;
  c.checkpoint_every = 2;
  c.generator.num_blocks = 1;
  c.generator.rrdbs_per_block = 1;
  c.generator.base_channels = 8;
  c.generator.growth_channels = 8;
  c.generator.bicubic_prior = true;
  c.discriminator.base_channels = 4;
  c.discriminator.strided_stages = 2;
  c.discriminator.dense_units = 8;
  c.ndsm_net.depth = 2;
  c.ndsm_net.base_channels = 4;
  c.sync();
  return c;
}

const Dataset& tiny_dataset() {
  static const Dataset ds = [] {
    std::vector<ScenePair> scenes;
    for (int i = 0; i < 10; ++i) scenes.push_back(generate_scene(900 + i, 64));
    return make_dataset(std::move(scenes));
  }();
  return ds;
}

TEST(Config, UnknownKeyListed) {
  try {
    TrainConfig::from_kv({{"lr", "0.1"}, {"seed", "1"}});
    FAIL() << "expected UsageError";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("lr"), std::string::npos);
  }
}

TEST(Config, KeyValueRoundTrip) {
  auto c = tiny_config();
  c.weights.epsilon = 0.05;
  c.ndsm_reduction = NdsmReduction::l2_norm;
  const auto back = TrainConfig::from_kv(c.to_kv());
  EXPECT_EQ(back.to_kv(), c.to_kv());
  EXPECT_EQ(back.hash(), c.hash());
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"desk.cfg", "acceptance.cfg", "tiny.cfg"}) {
    EXPECT_NO_THROW(load_train_config(std::filesystem::path(DSMSR_SOURCE_DIR) / "configs" / name)) << name;
  }
  EXPECT_THROW(load_train_config("/nonexistent/x.cfg"), UsageError);
}

TEST(Config, Validation) {
  auto c = tiny_config();
  c.patch_px = 30;
  c.sync();
  EXPECT_THROW(c.validate(), UsageError);
  c = tiny_config();
  c.scale = 3;
  c.sync();
  EXPECT_THROW(c.validate(), UsageError);
  EXPECT_THROW(TrainConfig::from_kv({{"weights.ndsm_reduction", "l1"}}), UsageError);
  EXPECT_THROW(TrainConfig::from_kv({{"learning_rate", "fast"}}), UsageError);
}

TEST(Config, HashIgnoresStepBudgets) {
  auto a = tiny_config(), b = tiny_config();
  b.ndsm_steps = 99;
  b.checkpoint_every = 7;
  EXPECT_EQ(a.hash(), b.hash());
  b.learning_rate = 0.5;
  EXPECT_NE(a.hash(), b.hash());
}

TEST(Training, EndToEndInMemory) {
  Trainer t(tiny_config());
  run_training(t, tiny_dataset(), TrainPhase::all);
  const auto& h = t.history();
  EXPECT_EQ(h.count(Phase::ndsm), 4u);
  EXPECT_EQ(h.count(Phase::sr_pretrain), 4u);
  EXPECT_EQ(h.count(Phase::gan), 3u);
  // Epsilon is twice the pretrain MAE.
  ASSERT_TRUE(t.pretrain_final_mae());
  EXPECT_EQ(*t.epsilon(), 2.0 * *t.pretrain_final_mae());
  EXPECT_EQ(t.manifest().at("epsilon_source"), "pretrain_mae");
  EXPECT_EQ(parse_double("gan.epsilon", t.manifest().at("gan.epsilon")), *t.epsilon());
  // The height network is frozen during the adversarial phase.
  EXPECT_EQ(t.manifest().at("gan.ndsm_checksum_start"), t.manifest().at("gan.ndsm_checksum_end"));
  EXPECT_EQ(t.manifest().at("gan.generator_updates"), "3");
  EXPECT_EQ(t.manifest().at("gan.discriminator_updates"), "3");
  for (const auto& r : h.of(Phase::gan)) {
    ASSERT_TRUE(r.d_loss && r.d_real && r.d_fake);
    EXPECT_GT(r.loss.content, 0);
    EXPECT_GT(r.loss.adversarial, 0);
  }
}

TEST(Training, ConfigEpsilonOverridesRule) {
  auto c = tiny_config();
  c.weights.epsilon = 0.123;
  Trainer t(c);
  run_training(t, tiny_dataset(), TrainPhase::all);
  EXPECT_EQ(*t.epsilon(), 0.123);
  EXPECT_EQ(t.manifest().at("epsilon_source"), "config");
}

TEST(Training, Deterministic) {
  Trainer a(tiny_config()), b(tiny_config());
  run_training(a, tiny_dataset(), TrainPhase::all);
  run_training(b, tiny_dataset(), TrainPhase::all);
  EXPECT_EQ(a.history().records, b.history().records);
  EXPECT_EQ(a.generator().params().checksum(), b.generator().params().checksum());
}

TEST(Training, AlphaZeroDropsHeightTerm) {
  auto c = tiny_config();
  c.weights.alpha = 0;
  Trainer t(c);
  run_training(t, tiny_dataset(), TrainPhase::all);
  for (const auto& r : t.history().of(Phase::gan)) {
    EXPECT_GT(r.loss.ndsm, 0);
    EXPECT_EQ(r.loss.total, r.loss.content + c.weights.adv_weight * r.loss.adversarial);
  }
}

TEST(Training, GanWithoutPretrainIsError) {
  Trainer t(tiny_config());
  run_training(t, tiny_dataset(), TrainPhase::ndsm);
  try {
    run_training(t, tiny_dataset(), TrainPhase::gan);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("generator pretrain bundle missing"), std::string::npos);
  }
}

TEST(Training, EmptyTrainingSetIsError) {
  Dataset empty;
  Trainer t(tiny_config());
  EXPECT_THROW(run_training(t, empty, TrainPhase::ndsm), DataError);
}

TEST(Training, OverfitLossDecreases) {
  auto c = tiny_config();
  c.pretrain_steps = 120;
  std::vector<PatchPair> patches;
  const auto& ds = tiny_dataset();
  for (int i = 0; i < 8; ++i) {
    const auto crops = crop_patches(ds.scenes[i], c.patch_px, 1, 40 + i);
    patches.push_back(make_pair(crops.front(), c.scale));
  }
  const FixedPatches src(patches, c.batch_size);
  Trainer t(c);
  t.pretrain_generator(src, {});
  const auto recs = t.history().of(Phase::sr_pretrain);
  double first = 0, last = 0;
  for (int i = 0; i < 50; ++i) {
    first += recs[i].loss.content / 50;
    last += recs[recs.size() - 50 + i].loss.content / 50;
  }
  EXPECT_LT(last, first);
  EXPECT_EQ(t.manifest().at("sr_pretrain.final_mae_source"), "train_window");
  EXPECT_NEAR(*t.pretrain_final_mae(), last, 1e-12);
}

TEST(Resume, HistoryLengthAndValuesMatchFreshRun) {
  TempDir dir("resume");
  auto c = tiny_config();
  c.ndsm_steps = 100;
  c.checkpoint_every = 25;
  const SceneSampler sampler(tiny_dataset().train(), c.patch_px, c.scale, c.batch_size, c.seed);
  {
    Trainer t(c, dir.path());
    t.train_ndsm(sampler, tiny_dataset().val());
    EXPECT_EQ(t.history().records.size(), 100u);
  }
  c.ndsm_steps = 150;
  Trainer resumed(c, dir.path());
  EXPECT_EQ(resumed.step_of(Phase::ndsm), 100);
  resumed.train_ndsm(sampler, tiny_dataset().val());
  EXPECT_EQ(resumed.history().records.size(), 150u);

  Trainer fresh(c);
  fresh.train_ndsm(sampler, tiny_dataset().val());
  ASSERT_EQ(fresh.history().records.size(), 150u);
  for (std::size_t i = 0; i < 150; ++i) {
    const auto& a = fresh.history().records[i];
    const auto& b = resumed.history().records[i];
    EXPECT_EQ(a.step, b.step);
    EXPECT_EQ(a.batch, b.batch);
    EXPECT_NEAR(a.loss.total, b.loss.total, 1e-5 * (1 + std::abs(a.loss.total))) << "step " << a.step;
  }
  EXPECT_EQ(fresh.ndsm_net().params().checksum(), resumed.ndsm_net().params().checksum());
}

TEST(Resume, AllPhasesAcrossInterruptions) {
  TempDir dir("resume_all");
  auto c = tiny_config();
  {
    Trainer t(c, dir.path());
    run_training(t, tiny_dataset(), TrainPhase::ndsm);
  }
  {
    Trainer t(c, dir.path());
    run_training(t, tiny_dataset(), TrainPhase::sr_pretrain);
  }
  c.gan_steps = 2;
  {
    Trainer t(c, dir.path());
    run_training(t, tiny_dataset(), TrainPhase::gan);
  }
  c.gan_steps = 3;
  Trainer resumed(c, dir.path());
  run_training(resumed, tiny_dataset(), TrainPhase::gan);

  Trainer fresh(c);
  run_training(fresh, tiny_dataset(), TrainPhase::all);
  ASSERT_EQ(resumed.history().records.size(), fresh.history().records.size());
  for (std::size_t i = 0; i < fresh.history().records.size(); ++i) {
    EXPECT_NEAR(resumed.history().records[i].loss.total, fresh.history().records[i].loss.total,
                1e-5 * (1 + std::abs(fresh.history().records[i].loss.total)));
  }
  EXPECT_EQ(resumed.generator().params().checksum(), fresh.generator().params().checksum());
  EXPECT_TRUE(std::filesystem::exists(dir / "generator.bundle"));
  EXPECT_TRUE(std::filesystem::exists(dir / "discriminator.bundle"));
}

TEST(Resume, ScaleMismatchIsCheckpointError) {
  TempDir dir("resume_scale");
  {
    Trainer t(tiny_config(), dir.path());
    run_training(t, tiny_dataset(), TrainPhase::ndsm);
  }
  auto c = tiny_config();
  c.scale = 8;
  c.sync();
  EXPECT_THROW(Trainer(c, dir.path()), CheckpointError);
  auto d = tiny_config();
  d.learning_rate = 0.01;
  EXPECT_THROW(Trainer(d, dir.path()), CheckpointError);
}

TEST(Resume, CorruptCheckpointIsError) {
  TempDir dir("resume_corrupt");
  {
    Trainer t(tiny_config(), dir.path());
    run_training(t, tiny_dataset(), TrainPhase::ndsm);
  }
  std::filesystem::resize_file(dir / "ndsm.bundle", 100);
  EXPECT_THROW(Trainer(tiny_config(), dir.path()), CheckpointError);
  std::ofstream(dir / kCheckpointManifest) << "garbage without equals\n";
  EXPECT_THROW(Trainer(tiny_config(), dir.path()), CheckpointError);
}

TEST(History, JsonRoundTrip) {
  StepRecord r{Phase::gan, 7, {0.1, 0.2, 0.3, 0.4}, 0.5, 0.6, 0.7, 0xDEADBEEFULL};
  EXPECT_EQ(parse_record(to_json_line(r)), r);
  TrainHistory h;
  h.records = {r, StepRecord{Phase::ndsm, 1, {0, 1.5, 0, 1.5}, {}, {}, {}, 3}};
  EXPECT_EQ(parse_history(format_history(h)), h.records);
}

}  // namespace
}  // namespace dsmsr
